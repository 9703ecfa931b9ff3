"""End-to-end orchestration with resumable, on-disk phases.

Layout under ``config.out_dir``::

    config.yaml                 resolved configuration
    log.jsonl                   one JSON object per event (phase, step, losses)
    data/clips.jsonl            clip index; data/<id>/{cloud,motion,joints,contact}.{json,bin}
    data/basis.{json,bin}
    annotations.jsonl           training annotations (ground-truth hands)
    annotations_test.jsonl      test annotations (stage-1 hands)
    ckpt/{stage1,base,controlnet,evaluators}.ckpt
    samples/<id>/{hands,affordance,motion}.{json,bin}
    report/{report.json,report.csv,figures/*.png}
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from hoimotion import annotation, evaluators, metrics, stage1, stage2
from hoimotion.affordance import contact_mask, reduced_affordance
from hoimotion.config import PipelineConfig
from hoimotion.diffusion import DiffusionSchedule
from hoimotion.geometry import BasisPointSet, PointCloudSequence, encode_sequence, sample_basis
from hoimotion.guidance import GuidanceWeights, guided_sample
from hoimotion.io import load_checkpoint, load_tensor, read_jsonl, save_checkpoint, save_tensor, write_jsonl
from hoimotion.llm import make_client
from hoimotion.motion import HAND_JOINTS, JOINT_NAMES, MotionSequence
from hoimotion.synthetic import InteractionClip, generate_synthetic

log = logging.getLogger(__name__)

PHASES = ("gen-data", "annotate", "train-stage1", "sample-stage1", "train-stage2", "sample", "evaluate")


class PhaseError(RuntimeError):
    def __init__(self, phase: str, message: str):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase


class Workspace:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.root = Path(config.out_dir)
        self.data = self.root / "data"
        self.ckpt = self.root / "ckpt"
        self.samples = self.root / "samples"
        self.report = self.root / "report"

    def marker(self, phase: str) -> Path:
        return self.root / f".done-{phase}"

    def done(self, phase: str) -> bool:
        m = self.marker(phase)
        return m.exists() and m.read_text().strip() == self.config.hash

    def mark(self, phase: str) -> None:
        self.marker(phase).write_text(self.config.hash)

    def event(self, phase: str, **fields) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        with (self.root / "log.jsonl").open("a") as fh:
            fh.write(json.dumps({"phase": phase, **fields}, sort_keys=True) + "\n")

    def require(self, phase: str, path: Path, producer: str) -> Path:
        if not path.exists():
            raise PhaseError(phase, f"missing {path}; run '{producer}' first")
        return path


# clip persistence


def save_clips(clips: list[InteractionClip], ws: Workspace) -> None:
    h = ws.config.hash
    index = []
    for c in clips:
        d = ws.data / c.id
        save_tensor(d / "cloud", c.cloud.coords, config_hash=h)
        save_tensor(d / "motion", c.motion.features, config_hash=h, fps=c.fps)
        save_tensor(d / "joints", c.joints, config_hash=h)
        save_tensor(d / "contact", c.hand_contact, dtype="u8", config_hash=h)
        index.append({"id": c.id, "category": c.category, "scenario": c.scenario, "split": c.split, "meta": c.meta})
    write_jsonl(ws.data / "clips.jsonl", index)


def load_clips(ws: Workspace, phase: str, split: str | None = None) -> list[InteractionClip]:
    index = ws.require(phase, ws.data / "clips.jsonl", "gen-data")
    h = ws.config.hash
    clips = []
    for rec in read_jsonl(index):
        if split is not None and rec["split"] != split:
            continue
        d = ws.data / rec["id"]
        motion, header = load_tensor(d / "motion", h)
        clips.append(
            InteractionClip(
                id=rec["id"],
                motion=MotionSequence(motion.astype(np.float64), header.get("fps", ws.config.fps)),
                cloud=PointCloudSequence(load_tensor(d / "cloud", h)[0].astype(np.float64)),
                joints=load_tensor(d / "joints", h)[0].astype(np.float64),
                category=rec["category"],
                scenario=rec["scenario"],
                hand_contact=load_tensor(d / "contact", h)[0].astype(bool),
                split=rec["split"],
                meta=rec.get("meta", {}),
            )
        )
    return clips


def load_basis(ws: Workspace, phase: str) -> BasisPointSet:
    arr, header = load_tensor(ws.require(phase, ws.data / "basis.json", "gen-data"))
    return BasisPointSet(arr.astype(np.float64), int(header["seed"]), float(header["radius"]))


def load_annotations(ws: Workspace, phase: str, name: str = "annotations.jsonl") -> dict:
    path = ws.require(phase, ws.root / name, "annotate" if name == "annotations.jsonl" else "sample-stage1")
    return {r["clip_id"]: annotation.AnnotationRecord.from_dict(r) for r in read_jsonl(path)}


# phases


def phase_gen_data(ws: Workspace) -> None:
    cfg = ws.config
    clips = generate_synthetic(cfg.seed, cfg.n_clips, cfg.scenario, cfg.clip_len, cfg.fps, cfg.n_points, cfg.test_fraction)
    save_clips(clips, ws)
    basis = sample_basis(cfg.seed, cfg.n_basis, cfg.basis_radius)
    save_tensor(ws.data / "basis", basis.basis, dtype="f64", seed=basis.seed, radius=basis.radius, config_hash=cfg.hash)
    ws.event("gen-data", clips=len(clips))


def phase_annotate(ws: Workspace) -> None:
    cfg = ws.config
    client = make_client(cfg.llm_backend, cfg.llm_fixtures)
    records = []
    for c in load_clips(ws, "annotate"):
        hands = c.joints[:, list(HAND_JOINTS)]
        rec = annotation.annotate_clip(c.id, c.cloud, c.category, hands, client, cfg.tau, c.fps)
        records.append(rec.to_dict())
    write_jsonl(ws.root / "annotations.jsonl", records)
    ws.event("annotate", records=len(records))


def _stage1_model(cfg: PipelineConfig) -> stage1.GuidanceDiffusion:
    return stage1.GuidanceDiffusion(
        n_basis=cfg.n_basis,
        n_points=cfg.n_points,
        seq_len=cfg.clip_len,
        d_model=cfg.stage1_d,
        n_layers=cfg.stage1_layers,
        n_head=cfg.n_head,
        sigma=cfg.sigma,
    )


def _log_due(step: int, total: int, points: int = 100) -> bool:
    return step % max(1, total // points) == 0 or step == total - 1


def _items(clips, basis, sigma):
    return [stage1.clip_targets(c, basis, sigma) for c in clips]


def train_stage1(cfg: PipelineConfig, clips, texts, basis, log_fn=None) -> stage1.GuidanceDiffusion:
    torch.manual_seed(cfg.seed)
    model = _stage1_model(cfg)
    items = _items(clips, basis, cfg.sigma)
    model.set_hand_stats(np.stack([it["hands"] for it in items]))
    schedule = DiffusionSchedule.cosine(cfg.T)
    opt = stage1.make_optimizer(model, cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    bs = min(cfg.batch_size, len(items))
    for step in range(cfg.stage1_steps):
        sel = rng.choice(len(items), size=bs, replace=False)
        batch = stage1.collate(model, [items[i] for i in sel], [texts[i] for i in sel])
        out = stage1.train_step(model, batch, schedule, opt, gen)
        if log_fn is not None and _log_due(step, cfg.stage1_steps):
            log_fn(step=step, **out)
    return model.eval()


def phase_train_stage1(ws: Workspace) -> None:
    cfg = ws.config
    clips = load_clips(ws, "train-stage1", "train")
    ann = load_annotations(ws, "train-stage1")
    basis = load_basis(ws, "train-stage1")
    texts = [ann[c.id].coarse_text for c in clips]
    model = train_stage1(cfg, clips, texts, basis, lambda **kw: ws.event("train-stage1", **kw))
    ws.ckpt.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ws.ckpt / "stage1.ckpt", model.state_dict(), cfg.hash, cfg.stage1_steps)


def load_stage1(ws: Workspace, phase: str) -> stage1.GuidanceDiffusion:
    state, _ = load_checkpoint(ws.require(phase, ws.ckpt / "stage1.ckpt", "train-stage1"), ws.config.hash)
    model = _stage1_model(ws.config)
    model.load_state_dict(state)
    return model.eval()


def _chunks(seq, n):
    for i in range(0, len(seq), n):
        yield seq[i : i + n]


def phase_sample_stage1(ws: Workspace) -> None:
    cfg = ws.config
    model = load_stage1(ws, "sample-stage1")
    clips = load_clips(ws, "sample-stage1", "test")
    ann = load_annotations(ws, "sample-stage1")
    basis = load_basis(ws, "sample-stage1")
    schedule = DiffusionSchedule.cosine(cfg.T)
    client = make_client(cfg.llm_backend, cfg.llm_fixtures)
    records = []
    for k, chunk in enumerate(_chunks(clips, cfg.batch_size)):
        raw = torch.as_tensor(np.stack([encode_sequence(c.cloud, basis) for c in chunk]), dtype=torch.float32)
        with torch.no_grad():
            bundle = model.bundle([ann[c.id].coarse_text for c in chunk], raw)
        pair = stage1.sample(model, bundle, schedule, seed=cfg.seed + k)
        for i, c in enumerate(chunk):
            save_tensor(ws.samples / c.id / "hands", pair.hands[i], config_hash=cfg.hash)
            save_tensor(ws.samples / c.id / "affordance", pair.affordance[i], config_hash=cfg.hash, sigma=cfg.sigma)
            # fine annotation from the predicted hands
            summary = annotation.summarize_trajectory(c.cloud, c.category, c.fps)
            coarse = ann[c.id].coarse_text
            events = annotation.infer_contact_events(pair.hands[i], c.cloud, cfg.tau, c.fps)
            fine = annotation.annotate_fine(annotation.build_fine_prompt(coarse, summary, events), client)
            records.append(annotation.AnnotationRecord(c.id, coarse, fine, events).to_dict())
    write_jsonl(ws.root / "annotations_test.jsonl", records)
    ws.event("sample-stage1", clips=len(clips))


def _base_kwargs(cfg):
    return {"d": cfg.stage2_d, "n_layers": cfg.stage2_layers, "n_head": cfg.n_head, "seq_len": cfg.clip_len}


def _condition(cfg):
    return stage2.SemGeoCondition(cfg.n_basis, cfg.n_points, d=cfg.cond_d, n_head=cfg.n_head, seq_len=cfg.clip_len)


def stage2_batch(clips, items, ann, sel, base) -> dict:
    return {
        "x0": base.normalize(np.stack([clips[i].motion.features for i in sel])).float(),
        "text": [ann[clips[i].id].coarse_text for i in sel],
        "fine": [ann[clips[i].id].fine_text for i in sel],
        "bps": torch.as_tensor(np.stack([items[i]["bps"] for i in sel]), dtype=torch.float32),
        "afford": torch.as_tensor(np.stack([items[i]["afford"] for i in sel]), dtype=torch.float32),
        "hands": torch.as_tensor(np.stack([items[i]["hands"] for i in sel]), dtype=torch.float32).flatten(-2),
    }


def train_stage2(cfg: PipelineConfig, clips, ann, basis, log_fn=None):
    """Pretrain the base denoiser, freeze it, then train the control branch."""
    torch.manual_seed(cfg.seed + 1)
    items = _items(clips, basis, cfg.sigma)
    schedule = DiffusionSchedule.cosine(cfg.T)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed + 1)
    bs = min(cfg.batch_size, len(clips))

    base = stage2.MotionDenoiser(**_base_kwargs(cfg))
    base.set_motion_stats(np.stack([c.motion.features for c in clips]))
    x0_all = base.normalize(np.stack([c.motion.features for c in clips])).float()
    opt = torch.optim.AdamW(base.parameters(), lr=cfg.lr)
    for step in range(cfg.base_steps):
        sel = rng.choice(len(clips), size=bs, replace=False)
        loss = stage2.pretrain_base_step(base, x0_all[sel], [ann[clips[i].id].coarse_text for i in sel], schedule, opt, gen)
        if log_fn is not None and _log_due(step, cfg.base_steps):
            log_fn(part="base", step=step, loss=loss)

    net = stage2.MotionControlNet(base, _condition(cfg))
    opt = torch.optim.AdamW(net.trainable_parameters(), lr=cfg.lr)
    for step in range(cfg.controlnet_steps):
        sel = rng.choice(len(clips), size=bs, replace=False)
        loss = stage2.train_controlnet(net, stage2_batch(clips, items, ann, sel, base), schedule, opt, gen)
        if log_fn is not None and _log_due(step, cfg.controlnet_steps):
            log_fn(part="controlnet", step=step, loss=loss)
    return net.eval()


def phase_train_stage2(ws: Workspace) -> None:
    cfg = ws.config
    clips = load_clips(ws, "train-stage2", "train")
    ann = load_annotations(ws, "train-stage2")
    basis = load_basis(ws, "train-stage2")
    net = train_stage2(cfg, clips, ann, basis, lambda **kw: ws.event("train-stage2", **kw))
    ws.ckpt.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ws.ckpt / "base.ckpt", net.base.state_dict(), cfg.hash, cfg.base_steps, model_kwargs=_base_kwargs(cfg))
    control = {k: v for k, v in net.state_dict().items() if not k.startswith("base.")}
    save_checkpoint(ws.ckpt / "controlnet.ckpt", control, cfg.hash, cfg.controlnet_steps)


def load_stage2(ws: Workspace, phase: str) -> stage2.MotionControlNet:
    base_path = ws.ckpt / "base.ckpt"
    if not base_path.exists():
        raise PhaseError(phase, f"missing base denoiser checkpoint {base_path}; run 'train-stage2' first")
    base = stage2.load_base(base_path)
    net = stage2.MotionControlNet(base, _condition(ws.config))
    state, _ = load_checkpoint(ws.require(phase, ws.ckpt / "controlnet.ckpt", "train-stage2"), ws.config.hash)
    state.update({f"base.{k}": v for k, v in base.state_dict().items()})
    net.load_state_dict(state)
    return net.eval()


def guidance_weights(cfg: PipelineConfig) -> GuidanceWeights:
    return GuidanceWeights(
        alpha=cfg.alpha,
        beta=cfg.beta,
        h_g=cfg.h_g,
        lbfgs_iters=cfg.lbfgs_iters,
        joint_weight=1.0 if cfg.joint_guidance else 0.0,
        foot_weight=1.0 if cfg.foot_guidance else 0.0,
    )


def generate_motions(cfg, net, clips, ann, basis, hands, affords, weights, seed):
    """Guided sampling for ``clips`` given stage-1 hands (L x 2 x 3) and affordance."""
    schedule = DiffusionSchedule.cosine(cfg.T)
    out = []
    for k, idx in enumerate(_chunks(list(range(len(clips))), cfg.batch_size)):
        chunk = [clips[i] for i in idx]
        h = np.stack([hands[i] for i in idx])
        a = np.stack([affords[i] for i in idx])
        raw = torch.as_tensor(np.stack([encode_sequence(c.cloud, basis) for c in chunk]), dtype=torch.float32)
        with torch.no_grad():
            f_text = net.base.text_encoder([ann[c.id].coarse_text for c in chunk])
            cond = net.condition(
                f_text,
                [ann[c.id].fine_text for c in chunk],
                raw,
                torch.as_tensor(a, dtype=torch.float32),
                torch.as_tensor(h, dtype=torch.float32).flatten(-2),
            )
        mask = np.stack([contact_mask(h[j], c.cloud, cfg.tau).values for j, c in enumerate(chunk)])
        out += guided_sample(net, cond, schedule, weights, seed + k, h, mask, cfg.clip_len, cfg.fps)
    return out


def phase_sample(ws: Workspace) -> None:
    cfg = ws.config
    net = load_stage2(ws, "sample")
    clips = load_clips(ws, "sample", "test")
    ann = load_annotations(ws, "sample", "annotations_test.jsonl")
    basis = load_basis(ws, "sample")
    hands, affords = [], []
    for c in clips:
        hands.append(load_tensor(ws.require("sample", ws.samples / c.id / "hands.json", "sample-stage1"))[0].astype(np.float64))
        affords.append(load_tensor(ws.samples / c.id / "affordance")[0].astype(np.float64))
    motions = generate_motions(cfg, net, clips, ann, basis, hands, affords, guidance_weights(cfg), cfg.seed)
    for c, m in zip(clips, motions):
        save_tensor(ws.samples / c.id / "motion", m.features, config_hash=cfg.hash, fps=m.fps)
    ws.event("sample", clips=len(clips))


def evaluate_generated(cfg, clips, motions, texts, ae, matcher, stage1_hands=None, stage1_afford=None) -> metrics.EvalReport:
    gen_joints = [m.joints() for m in motions]
    gt_joints = [c.joints for c in clips]
    pred_c = np.concatenate([contact_mask(j[:, list(HAND_JOINTS)], c.cloud, cfg.tau).values for j, c in zip(gen_joints, clips)])
    gt_c = np.concatenate([contact_mask(c.joints[:, list(HAND_JOINTS)], c.cloud, cfg.tau).values for c in clips])
    cs = metrics.contact_scores(pred_c, gt_c)
    gen_feats = np.stack([m.features for m in motions])
    gt_feats = np.stack([c.motion.features for c in clips])
    z_gen, z_gt = ae.embed(gen_feats), ae.embed(gt_feats)
    m_emb, t_emb = matcher.embed(gen_feats, texts)
    s1 = {}
    if stage1_hands is not None:
        gt_h = np.stack([c.joints[:, list(HAND_JOINTS)] for c in clips])
        s1 = metrics.hand_jpe_split(np.stack(stage1_hands), gt_h)
        gt_a = [reduced_affordance(c.cloud, c.joints[:, list(HAND_JOINTS)], cfg.sigma) for c in clips]
        s1["affordance_cos_sim"] = float(np.mean([metrics.affordance_similarity(p, g) for p, g in zip(stage1_afford, gt_a)]))
    return metrics.EvalReport(
        hand_jpe_cm=metrics.hand_jpe(np.stack(gen_joints), np.stack(gt_joints)),
        mpjpe_cm=metrics.mpjpe(np.stack(gen_joints), np.stack(gt_joints)),
        c_prec=cs["prec"],
        c_rec=cs["rec"],
        c_acc=cs["acc"],
        c_pct=cs["c_pct"],
        f1=cs["f1"],
        fid=metrics.fid(z_gen, z_gt),
        r_score=metrics.r_score(m_emb, t_emb, cfg.r_batch),
        diversity=metrics.diversity(z_gen, cfg.diversity_pairs, cfg.seed),
        fs=float(np.mean([metrics.foot_sliding(j) for j in gen_joints])),
        stage1=s1,
    )


def phase_evaluate(ws: Workspace) -> metrics.EvalReport:
    cfg = ws.config
    train = load_clips(ws, "evaluate", "train")
    test = load_clips(ws, "evaluate", "test")
    ann = load_annotations(ws, "evaluate")
    ev_path = ws.ckpt / "evaluators.ckpt"
    if ev_path.exists():
        state, _ = load_checkpoint(ev_path, cfg.hash)
        ae, matcher = evaluators.MotionAutoencoder(seq_len=cfg.clip_len), evaluators.TextMotionMatcher()
        ae.load_state_dict({k[3:]: v for k, v in state.items() if k.startswith("ae.")})
        matcher.load_state_dict({k[8:]: v for k, v in state.items() if k.startswith("matcher.")})
        ae.eval(), matcher.eval()
    else:
        ae, matcher = evaluators.train_evaluators(
            np.stack([c.motion.features for c in train]),
            [ann[c.id].coarse_text for c in train],
            cfg.evaluator_steps,
            seed=cfg.seed + 2,
            batch_size=cfg.batch_size,
            log=lambda **kw: ws.event("evaluate", part="evaluators", **kw),
        )
        state = {f"ae.{k}": v for k, v in ae.state_dict().items()}
        state.update({f"matcher.{k}": v for k, v in matcher.state_dict().items()})
        ws.ckpt.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ev_path, state, cfg.hash, cfg.evaluator_steps)

    motions, hands, affords = [], [], []
    for c in test:
        feats, header = load_tensor(ws.require("evaluate", ws.samples / c.id / "motion.json", "sample"), cfg.hash)
        motions.append(MotionSequence(feats.astype(np.float64), header.get("fps", cfg.fps)))
        hands.append(load_tensor(ws.samples / c.id / "hands")[0].astype(np.float64))
        affords.append(load_tensor(ws.samples / c.id / "affordance")[0].astype(np.float64))
    report = evaluate_generated(cfg, test, motions, [ann[c.id].coarse_text for c in test], ae, matcher, hands, affords)

    ws.report.mkdir(parents=True, exist_ok=True)
    (ws.report / "report.json").write_text(report.to_json())
    (ws.report / "report.csv").write_text(report.to_csv())
    from hoimotion import figures

    figures.render_report(ws, test, motions, hands, affords, report)
    ws.event("evaluate", **{k: v for k, v in report.to_dict().items() if k != "stage1"})
    return report


def export_render(ws: Workspace, dest=None) -> list[Path]:
    """Per-frame joint positions of generated motions as JSON, one file per clip."""
    dest = Path(dest) if dest else ws.root / "render"
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    for c in load_clips(ws, "export-render", "test"):
        feats, header = load_tensor(ws.require("export-render", ws.samples / c.id / "motion.json", "sample"))
        m = MotionSequence(feats.astype(np.float64), header.get("fps", ws.config.fps))
        payload = {
            "clip_id": c.id,
            "fps": m.fps,
            "joint_names": list(JOINT_NAMES),
            "frames": np.round(m.joints(), 5).tolist(),
            "object_points": np.round(c.cloud.coords, 5).tolist(),
        }
        path = dest / f"{c.id}.json"
        path.write_text(json.dumps(payload))
        written.append(path)
    return written


PHASE_FUNCS = {
    "gen-data": phase_gen_data,
    "annotate": phase_annotate,
    "train-stage1": phase_train_stage1,
    "sample-stage1": phase_sample_stage1,
    "train-stage2": phase_train_stage2,
    "sample": phase_sample,
    "evaluate": phase_evaluate,
}


def run_phase(config: PipelineConfig, phase: str, force: bool = True):
    ws = Workspace(config)
    ws.root.mkdir(parents=True, exist_ok=True)
    config.dump(ws.root / "config.yaml")
    if not force and ws.done(phase):
        log.info("phase %s already complete; skipping", phase)
        return None
    t0 = time.perf_counter()
    result = PHASE_FUNCS[phase](ws)
    ws.mark(phase)
    log.info("phase %s finished in %.1fs", phase, time.perf_counter() - t0)
    return result


def run_pipeline(config: PipelineConfig, resume: bool = True) -> metrics.EvalReport:
    """Run every phase in order; completed phases (same config hash) are skipped."""
    for phase in PHASES[:-1]:
        run_phase(config, phase, force=not resume)
    ws = Workspace(config)
    if resume and ws.done("evaluate") and (ws.report / "report.json").exists():
        data = json.loads((ws.report / "report.json").read_text())
        return metrics.EvalReport(**data)
    return run_phase(config, "evaluate", force=True)
