"""Prompt assembly and validation of the agent's JSON replies."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional

from .render import Frame
from .world import ACTIONS, COLOR_NAMES, Condition, ScenarioConfig, WorldState

CUBE_SELECTION = "cube_selection"
EXPLORATION = "exploration"

CUBE_KEYS = ("view-description", "reasoning", "action", "summary", "selected_cube", "identification")
EXPLORATION_KEYS = ("view-description", "reasoning", "action", "summary", "identification")
SCHEMA_KEYS = {CUBE_SELECTION: CUBE_KEYS, EXPLORATION: EXPLORATION_KEYS}

UNKNOWN = "unknown"
NO_HISTORY = "No previous steps."
SUMMARY_LIMIT = 500
BUMP_WARNING = "Warning: your previous move was blocked by a wall."

# Failure kinds in the order they are checked.  ``fenced_output`` is only a
# warning and is carried on the parsed step instead of being raised.
ERROR_KINDS = ("not_json", "wrong_keys", "bad_action", "bad_color", "premature_selection")
FENCED_OUTPUT = "fenced_output"

CUBE_SYSTEM_PROMPT = """\
You are a robot control agent.
Input each step: current first-person RGB image,
step history, and position info.
Return ONLY one valid JSON object with exactly these keys:
"view-description", "reasoning", "action",
"summary", "selected_cube", "identification".
Allowed actions:
  w = move forward
  s = move backward
  a = turn left by 30 degrees
  d = turn right by 30 degrees
  done = task complete
Rules:
  - action must be one of: w, a, s, d, done
  - do not use markdown fences
  - do not output any text outside the JSON object
  - selected_cube must be a valid color only when action is "done";
    otherwise selected_cube must be "none"
  - identification must always be present
Use action "done" only when you have enough evidence
to confidently select a cube.
If you are uncertain, keep exploring instead of using "done".
To select a cube you MUST be physically near it (at most 1 step away).
Do not invent visual evidence that is not present in the image or prompt."""

CUBE_USER_TEMPLATE = """\
Task: Identify your own body color using mirror evidence,
then select the physical
cube that matches that color.
<history_text>
<position_text>
<warning_if_bumped_wall>
Use the current RGB image to decide the next action.
Return one JSON object matching the required schema. If action is 'done',
justify the selected cube with evidence."""

MISLEADING_FIRST_LINE = "You are a <wrong_color> robot."

EXPLORATION_SYSTEM_PROMPT = """\
You are a robot control agent navigating a mirrored room
with moving distractor robots.
Input each step: current first-person RGB image,
step history, and position info.
Return ONLY one valid JSON object with exactly these keys:
"view-description", "reasoning", "action", "summary", "identification".
Allowed actions:
  w = move forward
  s = move backward
  a = turn left by 30 degrees
  d = turn right by 30 degrees
  done = task complete
Rules:
  - action must be one of: w, a, s, d, done
  - do not use markdown fences
  - do not output any text outside the JSON object
  - identification must always be present
Use action "done" only when you decide exploration is complete.
Do not invent visual evidence that is not present in the image or prompt."""

EXPLORATION_USER_TEMPLATE = """\
Task: Explore the room and observe distractor robots.
<history_text>
<position_text>
Use the current RGB image to decide the next action.
Return one JSON object matching the required schema."""

INSTRUCTIONS = {
    CUBE_SELECTION: "\n".join(CUBE_USER_TEMPLATE.split("\n")[:3]),
    EXPLORATION: EXPLORATION_USER_TEMPLATE.split("\n")[0],
}


class ProtocolError(ValueError):
    def __init__(self, kind: str, raw: str, detail: str = ""):
        super().__init__(f"{kind}: {detail}" if detail else kind)
        self.kind = kind
        self.raw = raw
        self.detail = detail


@dataclass(frozen=True)
class AgentStep:
    action: str
    identification: str = UNKNOWN
    selected_cube: Optional[str] = None
    view_description: str = ""
    reasoning: str = ""
    summary: str = ""
    fenced: bool = field(default=False, compare=False)


@dataclass(frozen=True)
class StepInput:
    frame: Optional[Frame]
    instruction: str
    history_text: str
    position_text: str
    warning: Optional[str] = None


def family_of(scenario_or_condition) -> str:
    if isinstance(scenario_or_condition, ScenarioConfig):
        return scenario_or_condition.family
    return Condition.parse(scenario_or_condition).family


def format_history(prev: Optional[AgentStep]) -> str:
    if prev is None:
        return NO_HISTORY
    return f"Previous step: action={prev.action}; summary={prev.summary[:SUMMARY_LIMIT]}"


def format_rejected_history(kind: str) -> str:
    """History line after a step whose replies were both rejected."""
    return f"Previous step: action=none; summary=reply rejected ({kind}), no action taken"


def format_position(state: WorldState, max_steps: int) -> str:
    return (
        f"Position: x={state.ego.x:.2f}, y={state.ego.y:.2f}, heading={state.ego.heading} deg. "
        f"Remaining steps: {max_steps - state.t}."
    )


def make_step_input(scenario: ScenarioConfig, state: WorldState, prev: Optional[AgentStep],
                    frame: Optional[Frame] = None, history_text: Optional[str] = None) -> StepInput:
    return StepInput(
        frame=frame,
        instruction=INSTRUCTIONS[scenario.family],
        history_text=format_history(prev) if history_text is None else history_text,
        position_text=format_position(state, scenario.max_steps),
        warning=BUMP_WARNING if state.bumped_last else None,
    )


def system_prompt(scenario: ScenarioConfig) -> str:
    if scenario.family == EXPLORATION:
        return EXPLORATION_SYSTEM_PROMPT
    if scenario.condition is Condition.E3:
        first = MISLEADING_FIRST_LINE.replace("<wrong_color>", scenario.wrong_color)
        return first + CUBE_SYSTEM_PROMPT[CUBE_SYSTEM_PROMPT.index("\n"):]
    return CUBE_SYSTEM_PROMPT


def user_prompt(family: str, step: StepInput) -> str:
    template = CUBE_USER_TEMPLATE if family == CUBE_SELECTION else EXPLORATION_USER_TEMPLATE
    lines = []
    for line in template.split("\n"):
        if line == "<history_text>":
            lines.append(step.history_text)
        elif line == "<position_text>":
            lines.append(step.position_text)
            # the exploration template has no warning slot; it rides with the position line
            if family == EXPLORATION and step.warning:
                lines.append(step.warning)
        elif line == "<warning_if_bumped_wall>":
            if step.warning:
                lines.append(step.warning)
        else:
            lines.append(line)
    return "\n".join(lines)


def build_prompts(scenario: ScenarioConfig, step: StepInput) -> tuple[str, str]:
    return system_prompt(scenario), user_prompt(scenario.family, step)


def reprompt_text(user_text: str, error: ProtocolError) -> str:
    detail = f" ({error.detail})" if error.detail else ""
    return (
        f"{user_text}\n"
        f"Your previous reply was rejected: {error.kind}{detail}. "
        "Reply with exactly one JSON object matching the required schema."
    )


# --------------------------------------------------------------------------
# parsing

_FENCE = re.compile(r"^\s*```[A-Za-z0-9_-]*[ \t]*\n?(.*?)\n?[ \t]*```\s*$", re.DOTALL)


def strip_fence(raw: str) -> tuple[str, bool]:
    match = _FENCE.match(raw)
    if match is None:
        return raw, False
    return match.group(1), True


def _text(value) -> str:
    return value if isinstance(value, str) else json.dumps(value)


def _normalize_identification(value) -> Optional[str]:
    if value is None:
        return UNKNOWN
    if not isinstance(value, str):
        return None
    v = value.strip().lower()
    if v in ("", UNKNOWN):
        return UNKNOWN
    return v if v in COLOR_NAMES else None


def _normalize_cube(value) -> Optional[str]:
    """Palette name, "none", or None when the value is not a valid colour."""
    if value is None:
        return "none"
    if not isinstance(value, str):
        return None
    v = value.strip().lower()
    if v == "none" or v in COLOR_NAMES:
        return v
    return None


def parse_agent_output(raw: str, family: str, t: Optional[int] = None) -> AgentStep:
    """Validate one reply; raise ProtocolError with the first failing check."""
    where = f" at t={t}" if t is not None else ""
    body, fenced = strip_fence(raw if isinstance(raw, str) else "")
    try:
        obj = json.loads(body)
    except (json.JSONDecodeError, TypeError):
        raise ProtocolError("not_json", raw, f"reply is not a single JSON object{where}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("not_json", raw, f"top-level JSON value is not an object{where}")

    expected = SCHEMA_KEYS[family]
    if set(obj) != set(expected):
        missing = sorted(set(expected) - set(obj))
        extra = sorted(set(obj) - set(expected))
        raise ProtocolError("wrong_keys", raw, f"missing={missing} unexpected={extra}")

    action = obj["action"]
    if not isinstance(action, str) or action not in ACTIONS:
        raise ProtocolError("bad_action", raw, f"action {action!r} is not one of {', '.join(ACTIONS)}")

    identification = _normalize_identification(obj["identification"])
    if identification is None:
        raise ProtocolError("bad_color", raw, f"identification {obj['identification']!r} is not a palette color")

    selected: Optional[str] = None
    if family == CUBE_SELECTION:
        cube = _normalize_cube(obj["selected_cube"])
        if cube is None:
            raise ProtocolError("bad_color", raw, f"selected_cube {obj['selected_cube']!r} is not a palette color")
        if action != "done" and cube != "none":
            raise ProtocolError("premature_selection", raw,
                                f"selected_cube must be \"none\" unless action is \"done\" (got {cube!r})")
        selected = None if cube == "none" else cube

    return AgentStep(
        action=action,
        identification=identification,
        selected_cube=selected,
        view_description=_text(obj["view-description"]),
        reasoning=_text(obj["reasoning"]),
        summary=_text(obj["summary"]),
        fenced=fenced,
    )


def dump_agent_step(step: AgentStep, family: str) -> str:
    obj = {
        "view-description": step.view_description,
        "reasoning": step.reasoning,
        "action": step.action,
        "summary": step.summary,
    }
    if family == CUBE_SELECTION:
        obj["selected_cube"] = step.selected_cube or "none"
    obj["identification"] = step.identification
    return json.dumps(obj)
