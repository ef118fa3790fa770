from __future__ import annotations

import pytest

from genav.core import (
    ActionRecord,
    Candidate,
    Choice,
    PromptSpec,
    ReviewerFeedback,
    Termination,
    Trajectory,
    TurnRecord,
)

# Acceptance results, filled by tests/test_acceptance.py and printed at the end of the session.
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")


def feedback(score: float) -> ReviewerFeedback:
    return ReviewerFeedback(score, score, score, "")


def make_traj(
    scores,
    t_max: int = 3,
    stop: bool | None = None,
    prompt: PromptSpec | None = None,
    choices=None,
    well_formed: bool = True,
) -> Trajectory:
    """Trajectory with the given reviewer scores; closes with STOP when it ends before the budget."""
    prompt = prompt or PromptSpec("p0", "a red cube on a blue sphere", 0.5)
    turns = []
    for t, s in enumerate(scores, start=1):
        choice = Choice.REGENERATE if t == 1 else (choices[t - 2] if choices else Choice.REFINE)
        action = ActionRecord(choice, f"{prompt.id}#t{t}", well_formed if t > 1 else True)
        turns.append(TurnRecord(t, action, Candidate(f"c{t}", None, f"ref{t}"), feedback(s)))
    if stop is None:
        stop = len(scores) < t_max
    if stop:
        turns.append(TurnRecord(len(scores) + 1, ActionRecord(Choice.STOP, None)))
        return Trajectory(prompt, tuple(turns), t_max, Termination.STOP_ACTION)
    return Trajectory(prompt, tuple(turns), t_max, Termination.BUDGET_EXHAUSTED)


@pytest.fixture
def prompt() -> PromptSpec:
    return PromptSpec("p0", "a red cube on a blue sphere", 0.5)
