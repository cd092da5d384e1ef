"""Evaluation quantities: accuracy, correction rates, convergence epoch,
annotation-efficiency formulas, and the multi-run report files."""

from __future__ import annotations

import json
import os

import numpy as np

from .data import Dataset, STABLE, UNSTABLE


def accuracy(model, test_ds: Dataset) -> float:
    """Percent of test samples whose prediction matches the clean label."""
    if test_ds.n == 0:
        raise ValueError("empty test set")
    pred = model.predict_classes(test_ds.features)
    return float((pred == test_ds.labels_true).mean() * 100.0)


def correction_rate(ds: Dataset) -> dict:
    """Share of attack-flipped samples whose training label is back at the
    truth, overall and per flip direction. Undefined rates are None."""
    hard = np.argmax(ds.labels_train, axis=1)
    restored = hard == ds.labels_true

    def rate(mask):
        if not mask.any():
            return None
        return float(restored[mask].mean() * 100.0)

    flipped = ds.flipped_mask
    return {
        "overall": rate(flipped),
        # false-stable labels (true class unstable) corrected back to unstable
        "sf_ut": rate(flipped & (ds.labels_true == UNSTABLE)),
        # false-unstable labels (true class stable) corrected back to stable
        "uf_st": rate(flipped & (ds.labels_true == STABLE)),
    }


def convergence_epoch(trace, band: float = 0.25, patience: int = 10) -> tuple[int, bool]:
    """Smallest epoch that enters the band (max - band) and holds it for the
    next `patience` epochs. If no window fits before the trace ends, returns
    the entry epoch of the final in-band run with a truncation flag."""
    trace = list(trace)
    if not trace:
        raise ValueError("empty accuracy trace")
    top = max(trace)
    in_band = [a >= top - band for a in trace]
    last = len(trace) - 1
    for e in range(len(trace)):
        if e + patience <= last and all(in_band[e:e + patience + 1]):
            return e, False
    if in_band[last]:
        e = last
        while e >= 1 and in_band[e - 1]:
            e -= 1
        return e, True
    return int(np.argmax(np.asarray(trace))), True


def relative_efficiency(delta: float, k_abs: float, dup_ratio: float,
                        total_queries: int = 1) -> tuple[float, bool]:
    """Accuracy gain times convergence speedup over the duplicate-query ratio.

    A zero duplicate ratio is floored at one duplicate per issued query; the
    returned flag reports whether the floor engaged.
    """
    if dup_ratio < 0:
        raise ValueError("duplicate ratio must be nonnegative")
    floor = 1.0 / max(int(total_queries), 1)
    floored = dup_ratio < floor
    return delta * k_abs / max(dup_ratio, floor), floored


def absolute_efficiency(xi: float, n_q: float, r: float) -> float | None:
    """Relative efficiency discounted by query volume; None when no queries."""
    if n_q <= 0:
        return None
    return xi / n_q ** r


REPORT_COLUMNS = [
    "run_id", "method", "attack_kind", "ratio", "accuracy", "conv_epoch",
    "corr_overall", "corr_SF_UT", "corr_UF_ST", "N_q", "N_dq_over_Nq",
    "xi", "xi_star", "r",
]

# increment rows are emitted for these (method, baseline-method) pairings
INCREMENT_PAIRS = [("mmr", "baseline-ce"), ("mmr-hil", "mmr")]


def _fmt(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _run_summary(run: dict) -> dict:
    cfg = run["config"]
    snaps = run["snapshots"]
    if not snaps:
        raise ValueError(f"run {run.get('run_id')} has no snapshots")
    trace = [s["accuracy"] for s in snaps]
    conv, truncated = convergence_epoch(
        trace, band=cfg.get("conv_band", 0.25), patience=cfg.get("patience", 10))
    last = snaps[-1]
    attack = cfg.get("attack") or {"kind": "none", "ratio": 0.0}
    return {
        "run_id": run["run_id"],
        "method": cfg["method"],
        "seed": cfg["seed"],
        "attack_kind": attack["kind"],
        "ratio": float(attack["ratio"]),
        "accuracy": trace[-1],
        "conv_epoch": conv,
        "conv_truncated": truncated,
        "corr_overall": last["correction"]["overall"],
        "corr_SF_UT": last["correction"]["sf_ut"],
        "corr_UF_ST": last["correction"]["uf_st"],
        "N_q": last["n_q"],
        "N_dq": last["n_dq"],
        "N_dq_over_Nq": last["n_dq_over_n_q"],
        "total_queries": last["total_queries"],
    }


def build_report(runs: list[dict], r: float = 1.0) -> dict:
    """Assemble per-run rows plus accuracy/convergence increment rows (and
    annotation-efficiency figures) for matched method pairs."""
    summaries = [_run_summary(run) for run in runs]
    summaries.sort(key=lambda s: s["run_id"])

    rows = []
    for s in summaries:
        rows.append({
            "run_id": s["run_id"], "method": s["method"],
            "attack_kind": s["attack_kind"], "ratio": s["ratio"],
            "accuracy": s["accuracy"], "conv_epoch": s["conv_epoch"],
            "corr_overall": s["corr_overall"], "corr_SF_UT": s["corr_SF_UT"],
            "corr_UF_ST": s["corr_UF_ST"], "N_q": s["N_q"],
            "N_dq_over_Nq": s["N_dq_over_Nq"], "xi": None, "xi_star": None,
            "r": None,
        })

    increments = []
    index = {(s["method"], s["attack_kind"], s["ratio"], s["seed"]): s for s in summaries}
    if len(index) != len(summaries):
        raise ValueError("duplicate (method, attack, ratio, seed) runs in report input")
    for upper, lower in INCREMENT_PAIRS:
        for s in summaries:
            if s["method"] != upper:
                continue
            base = index.get((lower, s["attack_kind"], s["ratio"], s["seed"]))
            if base is None:
                continue
            delta = s["accuracy"] - base["accuracy"]
            k = s["conv_epoch"] - base["conv_epoch"]
            row = {
                "run_id": f"delta_{upper}_vs_{lower}_{s['attack_kind']}_{s['ratio']}_seed{s['seed']}",
                "method": f"delta:{upper}/{lower}",
                "attack_kind": s["attack_kind"], "ratio": s["ratio"],
                "accuracy": delta, "conv_epoch": k,
                "corr_overall": None, "corr_SF_UT": None, "corr_UF_ST": None,
                "N_q": s["N_q"], "N_dq_over_Nq": s["N_dq_over_Nq"],
                "xi": None, "xi_star": None, "r": None,
            }
            if (upper, lower) == ("mmr-hil", "mmr"):
                xi, floored = relative_efficiency(
                    delta, abs(k), s["N_dq_over_Nq"] or 0.0,
                    total_queries=s["total_queries"])
                row["xi"] = xi
                row["xi_star"] = absolute_efficiency(xi, s["N_q"], r)
                row["r"] = r
                row["xi_floor_engaged"] = floored
            increments.append(row)
    return {"rows": rows + increments, "r": r}


def emit_report(runs: list[dict], out_dir: str, r: float = 1.0) -> dict:
    report = build_report(runs, r=r)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w") as f:
        f.write(",".join(REPORT_COLUMNS) + "\n")
        for row in report["rows"]:
            f.write(",".join(_fmt(row.get(col)) for col in REPORT_COLUMNS) + "\n")
    json_path = os.path.join(out_dir, "report.json")
    payload = {
        "rows": report["rows"],
        "r": r,
        "convergence_definition": (
            "smallest epoch within conv_band accuracy points of the run maximum "
            "that stays in that band for the next `patience` epochs"
        ),
    }
    with open(json_path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return {"csv": csv_path, "json": json_path, "report": payload}
