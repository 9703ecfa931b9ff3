"""Coarse-to-fine interaction annotation.

The coarse pass turns the object's bounding box and trajectory into one
sentence; the fine pass adds per-second hand-contact lines and asks for a
three-phase description.  Prompts follow a fixed template; the language
model behind them is pluggable (see ``hoimotion.llm``).
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field

import numpy as np

from hoimotion.affordance import DEFAULT_TAU, contact_mask
from hoimotion.geometry import PointCloudSequence
from hoimotion.llm import LanguageModelClient, LLMError, Prompt

ACTION_LIST = (
    "face", "flip", "grab", "grasp", "hold", "kick", "lift", "move", "pick",
    "place", "push", "pull", "put", "release", "rotate", "set", "slide",
    "swing", "tilt", "turn", "sit", "bend", "shake", "wave", "drag",
)  # fmt: skip
DIRECTIONS = (
    "left", "right", "top", "bottom", "left-top", "left-bottom", "right-top", "right-bottom",
)  # fmt: skip
HANDS = ("none", "left", "right", "both")

DEAD_ZONE = 0.10
LIFT_RISE = 0.15
MOVE_DIST = 0.30
ROTATE_SWING = 0.5
HELD_HEIGHT = 0.5

_COORDS = (
    "Coordinate System: \n"
    "The coordinate system of the 3D scene includes x, y, and z-axes. "
    "The person moves on the XOZ plane, and the positive y-axis represents height.\n"
)

COARSE_TEMPLATE = (
    "Instructions: You are an expert on the interaction between 3D human motion and object. "
    "A person will interact with a object, give me a sentence that how the person will "
    "interact with this object based on following information.\n"
    "[start of Given Information]\n"
    + _COORDS
    + "Target Object and category:\n"
    "The category of the object is {CLASS}. The size of the {CLASS} is {SIZE}.\n"
    "The interaction with this object will last approximately {T} seconds. "
    "The object center: {CENTER}.\n"
    "Possible actions list: ACTION_LIST = [{ACTION_LIST}]\n"
    "[End of Given Information]\n"
)

FINE_TEMPLATE = (
    "Instructions: {COARSE}\n"
    "You are an expert on the interaction between 3D human motion and object. Given the "
    "instruction, give me a sentence that how the person will interact with this object in "
    "detailed, including the arm and leg movement in each 3s, make each sentence just "
    "include key action.\n"
    "[start of Given Information]\n"
    + _COORDS
    + "Target Object and category:\n"
    "The category of the object is {CLASS}. The size of the {CLASS} is {SIZE}.\n"
    "The object center with hand contact information in total {LAST_TIME}\n"
    "{CONTACT_LINES}\n"
    "[End of Given Information]\n\n"
    "[Start of Rule]\n"
    "Divide the total movement into three step.\n"
    "Inference how their arms and legs move.\n"
    "Inference the hand-object interaction direction, chosen from:"
    + ", ".join(f'"{d}"' for d in DIRECTIONS)
    + ".\n"
    "Make sure each sentence includes key action.\n"
    "[End of Rule]\n\n"
    "[Start of Example]\n"
    "A person lifts the white chair, rotates the white chair, and puts down the white chair.\n"
    "The fine-grained result:\n"
    "First, the person faces the back of the white chair, grasps it with both hands from the "
    "left-bottom and right-bottom sides, bending slightly at the knees as both arms lift the "
    "chair off the ground.\n"
    "Next, maintaining grip, the person rotates the white chair with both hands, lifting the "
    "chair slightly higher.\n"
    "Finally, the person puts down the white chair, with the right arm pushing from the "
    "right-top and the left arm steadying from the left-top, as both legs move forward to "
    "reposition.\n"
    "[End of Example]\n"
)


@dataclass(frozen=True)
class TrajectorySummary:
    category: str
    size: tuple
    duration_s: float
    centers: tuple  # one (x, y, z) per sampled second
    swing: float = 0.0  # largest yaw change of the footprint's principal axis, radians
    action_list: tuple = ACTION_LIST


@dataclass(frozen=True)
class ContactEvent:
    time_s: float
    hands: str
    position: tuple
    direction: tuple = ()  # one label per contacting hand, left hand first
    center: tuple = ()


@dataclass
class AnnotationRecord:
    clip_id: str
    coarse_text: str
    fine_text: list
    events: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.fine_text) != 3:
            raise ValueError(f"phase count: expected 3 fine sentences, got {len(self.fine_text)}")

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "coarse_text": self.coarse_text,
            "fine_text": list(self.fine_text),
            "events": [asdict(e) for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        events = [
            ContactEvent(
                time_s=e["time_s"],
                hands=e["hands"],
                position=tuple(e["position"]),
                direction=tuple(e["direction"]),
                center=tuple(e["center"]),
            )
            for e in d.get("events", [])
        ]
        return cls(d["clip_id"], d["coarse_text"], list(d["fine_text"]), events)


def _sample_frames(n_frames: int, fps: float) -> np.ndarray:
    step = max(int(round(fps)), 1)
    return np.arange(0, n_frames, step)


def _principal_yaw(points: np.ndarray) -> tuple[float, float]:
    xz = points[:, [0, 2]] - points[:, [0, 2]].mean(axis=0)
    evals, evecs = np.linalg.eigh(xz.T @ xz)
    axis = evecs[:, -1]
    gap = evals[-1] / max(evals[0], 1e-12)
    return float(np.arctan2(axis[0], axis[1])), float(gap)


def _axis_swing(coords: np.ndarray, frames) -> float:
    base, gap = _principal_yaw(coords[0])
    swing = 0.0
    for f in frames:
        ang, g = _principal_yaw(coords[f])
        if min(gap, g) < 1.2:
            # near-square footprint: principal axis is unreliable, use point correspondences
            a = coords[0][:, [0, 2]] - coords[0][:, [0, 2]].mean(axis=0)
            b = coords[f][:, [0, 2]] - coords[f][:, [0, 2]].mean(axis=0)
            d = float(np.arctan2(np.sum(a[:, 1] * b[:, 0] - a[:, 0] * b[:, 1]), np.sum(a * b)))
        else:
            # axes are sign-ambiguous: compare modulo pi
            d = (ang - base + np.pi / 2) % np.pi - np.pi / 2
        swing = max(swing, abs(d))
    return swing


def summarize_trajectory(cloud: PointCloudSequence, category: str, fps: float = 30.0) -> TrajectorySummary:
    coords = cloud.coords
    frames = _sample_frames(coords.shape[0], fps)
    size = coords[0].max(axis=0) - coords[0].min(axis=0)
    centers = tuple(tuple(float(v) for v in coords[f].mean(axis=0)) for f in frames)
    all_frames = np.arange(coords.shape[0])
    return TrajectorySummary(
        category=category,
        size=tuple(float(s) for s in size),
        duration_s=coords.shape[0] / fps,
        centers=centers,
        swing=_axis_swing(coords, all_frames),
    )


def _fmt_vec(v) -> str:
    return "(" + ", ".join(f"{x:.2f}" for x in v) + ")"


def build_coarse_prompt(summary: TrajectorySummary) -> Prompt:
    if not summary.category or not summary.category.strip():
        raise ValueError("category must be a non-empty string")
    text = COARSE_TEMPLATE.format(
        CLASS=summary.category,
        SIZE=_fmt_vec(summary.size),
        T=f"{summary.duration_s:.2f}",
        CENTER=", ".join(_fmt_vec(c) for c in summary.centers),
        ACTION_LIST=", ".join(f"'{a}'" for a in summary.action_list),
    )
    return Prompt(text, {"kind": "coarse", "summary": summary})


def _third_person(verb: str) -> str:
    if verb.endswith(("sh", "ch", "s", "x")):
        return verb + "es"
    return verb + "s"


def _heading_word(dx: float, dz: float) -> str:
    if abs(dz) >= abs(dx):
        return "forward" if dz >= 0 else "backward"
    return "to the left" if dx > 0 else "to the right"


def coarse_clauses(summary: TrajectorySummary) -> list[str]:
    """Rule table from object displacement to action clauses."""
    c = np.asarray(summary.centers)
    cat = summary.category
    y0 = c[0, 1]
    rise = c[:, 1].max() - y0
    drop = c[:, 1].max() - c[-1, 1]
    disp = c[-1] - c[0]
    horiz = float(np.hypot(disp[0], disp[2]))
    if rise > LIFT_RISE:
        clauses = [f"lifts the {cat}"]
        if summary.swing > ROTATE_SWING and horiz < MOVE_DIST:
            clauses.append(f"rotates the {cat}")
        if drop > LIFT_RISE:
            clauses.append("sets it back down")
        return clauses
    if horiz > MOVE_DIST:
        if y0 > HELD_HEIGHT:
            return [f"holds the {cat}", f"moves it {_heading_word(disp[0], disp[2])}"]
        # the person starts at the origin facing +z
        if disp[2] >= 0:
            return [f"pushes the {cat} {_heading_word(disp[0], disp[2])}"]
        return [f"pulls the {cat} backward"]
    if summary.swing > ROTATE_SWING:
        return [f"rotates the {cat}"]
    return [f"holds the {cat}"] if y0 > HELD_HEIGHT else [f"faces the {cat}"]


def _join(clauses: list[str]) -> str:
    if len(clauses) == 1:
        return clauses[0]
    if len(clauses) == 2:
        return f"{clauses[0]} and {clauses[1]}"
    return ", ".join(clauses[:-1]) + f", and {clauses[-1]}"


def template_coarse(summary: TrajectorySummary) -> str:
    return f"A person {_join(coarse_clauses(summary))}."


def annotate_coarse(prompt: str, client: LanguageModelClient) -> str:
    try:
        text = client.complete(prompt)
    except LLMError:
        raise
    except Exception as exc:  # noqa: BLE001 - any backend failure is retriable
        raise LLMError(f"LLM backend failed: {exc}", prompt) from exc
    text = text.strip()
    if not text:
        raise LLMError("LLM returned an empty response", prompt)
    return split_sentences(text)[0]


def direction_label(offset, extent, dead_zone: float = DEAD_ZONE) -> str:
    """Label a contact point from its (x, y) offset to the object centre.

    +x is the person's left at the canonical start (facing +z), +y is up.
    Offsets inside ``dead_zone * extent`` collapse to a pure label.
    """
    dx, dy = float(offset[0]), float(offset[1])
    ex, ey = max(float(extent[0]), 1e-9), max(float(extent[1]), 1e-9)
    horiz = "" if abs(dx) < dead_zone * ex else ("left" if dx > 0 else "right")
    vert = "" if abs(dy) < dead_zone * ey else ("top" if dy > 0 else "bottom")
    if horiz and vert:
        return f"{horiz}-{vert}"
    if horiz or vert:
        return horiz or vert
    return ("left" if dx >= 0 else "right") if abs(dx) / ex >= abs(dy) / ey else ("top" if dy >= 0 else "bottom")


def infer_contact_events(
    joints, cloud: PointCloudSequence, tau: float = DEFAULT_TAU, fps: float = 30.0
) -> list[ContactEvent]:
    """One event per sampled second from (predicted) hand positions.

    ``joints`` is L x 2 x 3 (left, right hand) or a full L x 22 x 3 skeleton.
    """
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape[1] > 2:
        from hoimotion.motion import HAND_JOINTS

        joints = joints[:, list(HAND_JOINTS)]
    mask = contact_mask(joints, cloud, tau).values
    coords = cloud.coords
    events = []
    for f in _sample_frames(coords.shape[0], fps):
        pts = coords[f]
        center = pts.mean(axis=0)
        extent = pts.max(axis=0) - pts.min(axis=0)
        left, right = bool(mask[f, 0]), bool(mask[f, 1])
        hands = {(False, False): "none", (True, False): "left", (False, True): "right", (True, True): "both"}[
            (left, right)
        ]
        touching = [k for k, on in enumerate((left, right)) if on]
        if touching:
            position = joints[f, touching].mean(axis=0)
            direction = tuple(direction_label(joints[f, k] - center, extent) for k in touching)
        else:
            position, direction = center, ()
        events.append(
            ContactEvent(
                time_s=float(f / fps),
                hands=hands,
                position=tuple(float(v) for v in position),
                direction=direction,
                center=tuple(float(v) for v in center),
            )
        )
    return events


_HAND_PHRASE = {
    "none": "no hand contact",
    "left": "single contact hand(left)",
    "right": "single contact hand(right)",
    "both": "both hand in contact",
}


def build_fine_prompt(coarse: str, summary: TrajectorySummary, events: list[ContactEvent]) -> Prompt:
    if not coarse or not coarse.strip():
        raise ValueError("coarse text must be non-empty")
    if not summary.category or not summary.category.strip():
        raise ValueError("category must be a non-empty string")
    lines = [
        f"At {e.time_s:.0f}s, object center is {_fmt_vec(e.center)}, {_HAND_PHRASE[e.hands]}"
        + (f" at position {_fmt_vec(e.position)}." if e.hands != "none" else ".")
        for e in events
    ]
    text = FINE_TEMPLATE.format(
        COARSE=coarse.strip(),
        CLASS=summary.category,
        SIZE=_fmt_vec(summary.size),
        LAST_TIME=f"{summary.duration_s:.2f}s",
        CONTACT_LINES="\n".join(lines),
    )
    return Prompt(text, {"kind": "fine", "coarse": coarse, "summary": summary, "events": list(events)})


_PERSON = re.compile(r"^\s*a\s+person\s+", re.IGNORECASE)


def _clauses_from_coarse(coarse: str) -> list[str]:
    body = _PERSON.sub("", coarse.strip().rstrip("."))
    parts = [p.strip() for p in re.split(r",\s*(?:and\s+)?|\s+and\s+", body) if p.strip()]
    out = []
    for p in parts:
        verb, _, rest = p.partition(" ")
        if verb in ACTION_LIST:
            verb = _third_person(verb)
        out.append(f"{verb} {rest}".strip())
    return out or ["interacts with the object"]


def _contact_phrase(events: list[ContactEvent]) -> str:
    touching = [e for e in events if e.hands != "none"]
    if not touching:
        return ""
    hands = max(HANDS[1:], key=lambda h: sum(e.hands == h for e in touching))
    dirs = next(e.direction for e in touching if e.hands == hands)
    if hands == "both":
        return f"with both hands from the {dirs[0]} and {dirs[1]} sides"
    return f"with the {hands} hand from the {dirs[0]} side"


def _leg_phrase(events: list[ContactEvent]) -> str:
    if len(events) < 2:
        return "keeping both feet planted"
    c = np.asarray([e.center for e in events])
    d = c[-1] - c[0]
    if np.hypot(d[0], d[2]) > 0.2:
        return "walking forward"
    if np.ptp(c[:, 1]) > LIFT_RISE:
        return "bending slightly at the knees"
    return "keeping both feet planted"


def template_fine(coarse: str, summary: TrajectorySummary, events: list[ContactEvent]) -> list[str]:
    cat = summary.category
    lead = ("First", "Next", "Finally")
    if not events:
        return [
            f"First, the person approaches the {cat}.",
            f"Next, the person reaches toward the {cat}.",
            f"Finally, the person stands facing the {cat}.",
        ]
    clauses = _clauses_from_coarse(coarse)
    third = summary.duration_s / 3
    out = []
    for i in range(3):
        phase = [e for e in events if i * third <= e.time_s < (i + 1) * third] or [
            min(events, key=lambda e: abs(e.time_s - (i + 0.5) * third))
        ]
        clause = clauses[min(i * len(clauses) // 3, len(clauses) - 1)]
        if all(e.hands == "none" for e in phase):
            clause = f"approaches the {cat}" if i == 0 else f"releases the {cat}"
        parts = [f"{lead[i]}, the person {clause}"]
        contact = _contact_phrase(phase)
        if contact:
            parts.append(contact)
        # include the preceding second so single-event phases still show motion
        window = [e for e in events if i * third - 1.0 <= e.time_s < (i + 1) * third]
        out.append(" ".join(parts) + f", {_leg_phrase(window)}.")
    return out


def split_sentences(text: str) -> list[str]:
    lines = [s.strip() for s in text.strip().splitlines() if s.strip()]
    if len(lines) > 1:
        return lines
    return [s.strip() for s in re.split(r"(?<=[.!?])\s+", text.strip()) if s.strip()]


def annotate_fine(prompt: str, client: LanguageModelClient) -> list[str]:
    try:
        text = client.complete(prompt)
    except LLMError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise LLMError(f"LLM backend failed: {exc}", prompt) from exc
    sentences = split_sentences(text)
    if len(sentences) != 3:
        raise ValueError(f"phase count: expected 3 sentences, got {len(sentences)}")
    return sentences


def annotate_clip(
    clip_id: str,
    cloud: PointCloudSequence,
    category: str,
    hands,
    client: LanguageModelClient,
    tau: float = DEFAULT_TAU,
    fps: float = 30.0,
) -> AnnotationRecord:
    summary = summarize_trajectory(cloud, category, fps)
    coarse = annotate_coarse(build_coarse_prompt(summary), client)
    events = infer_contact_events(hands, cloud, tau, fps)
    fine = annotate_fine(build_fine_prompt(coarse, summary, events), client)
    return AnnotationRecord(clip_id, coarse, fine, events)
