"""Shared pytest configuration: prints one verdict line per acceptance
criterion after the run, based on the outcomes of the tests in
test_acceptance.py."""

from __future__ import annotations

CRITERIA = {
    1: "gradient correctness (finite differences, 100+ seeds, <1 min)",
    2: "attention invariants (normalization, permutation, locality)",
    3: "baseline oracle equivalence (exact vs enumeration, greedy bound)",
    4: "reward and metric fidelity (log recomputation to 1e-9)",
    5: "learning trend (desk scale beats random by 0.15 in 2/3 seeds)",
    6: "ablation direction (full beats no_comm and mean_pool by 0.03)",
    7: "zero-shot ordering (coverage nondecreasing across team sizes)",
    8: "upper-bound consistency (bound >= snapped policy coverage)",
    9: "combat bookkeeping and communication win-rate trend",
    10: "determinism (re-runs write byte-identical CSVs)",
}


def _criterion_of(nodeid: str):
    marker = "test_acceptance.py::test_criterion_"
    if marker not in nodeid:
        return None
    digits = nodeid.split(marker, 1)[1][:2]
    try:
        return int(digits.rstrip("_abcdefghijklmnopqrstuvwxyz"))
    except ValueError:
        return None


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            num = _criterion_of(getattr(report, "nodeid", ""))
            if num is not None:
                worst = outcomes.get(num)
                rank = {"passed": 0, "skipped": 1, "failed": 2, "error": 2}
                if worst is None or rank[status] > rank[worst]:
                    outcomes[num] = status
    if not outcomes:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for num in sorted(CRITERIA):
        if num not in outcomes:
            continue
        verdict = {"passed": "PASS", "skipped": "SKIP"}.get(outcomes[num], "FAIL")
        tr.write_line(f"criterion {num:2d}: {verdict}  {CRITERIA[num]}")
