"""Published reference numbers used for comparison tables.

None of these values feed back into computation except as an optional
threshold source for training; they are cited, not recomputed.
"""

RANGE_ORDER = ("n01", "n10", "n20", "neg", "p01", "p11", "p20", "pos", "sym")

# Convergence thresholds by range, ordered (add, sub, mul, div).
THRESHOLDS = {
    "sym": (7.55e-07, 1.31e-07, 1.27e-05, 4.55e-08),
    "neg": (1.14e-06, 9.44e-08, 2.35e-05, 6.59e-08),
    "pos": (3.68e-07, 1.67e-07, 2.04e-06, 2.53e-08),
    "n10": (1.13e-06, 1.76e-07, 1.83e-05, 9.25e-08),
    "p01": (2.61e-08, 3.42e-08, 4.31e-09, 1.06e-07),
    "n01": (3.64e-07, 7.68e-09, 6.13e-08, 4.07e-07),
    "p11": (2.63e-07, 3.04e-07, 1.39e-06, 2.26e-08),
    "n20": (1.96e-05, 8.12e-06, 1.99e-01, 1.99e-08),
    "p20": (2.73e-04, 9.47e-06, 6.67e-02, 3.19e-08),
}
THRESHOLD_MEANS = {"add": 3.30e-05, "sub": 2.06e-06, "mul": 2.95e-02, "div": 9.07e-08}

# Per-operation summary: mean convergence step, mean sparsity, mean extrapolation error.
PERFORMANCE = {
    "add": (2170, 0.281, 3.3e-6),
    "sub": (7842, 0.280, 1.5e-6),
    "mul": (5626, 0.266, 1.4e-5),
    "div": (1400, 0.277, 7.3e-8),
}

# Baseline success rates (%), rows in RANGE_ORDER.
BASELINES = {
    "add": {
        "NAU": (100, 100, 100, 100, 100, 100, 100, 100, 100),
        "iNALU": (100, 100, 100, 100, 100, 100, 100, 100, 100),
        "NALU": (52, 40, 68, 64, 16, 76, 20, 80, 0),
        "G-NALU": (24, 0, 8, 0, 12, 0, 4, 0, 0),
    },
    "sub": {
        "NAU": (100, 100, 100, 100, 100, 100, 100, 100, 100),
        "iNALU": (100, 40, 100, 100, 100, 56, 100, 100, 100),
        "NALU": (0, 0, 20, 12, 0, 0, 84, 12, 0),
        "G-NALU": (0, 0, 4, 0, 0, 0, 20, 0, 0),
    },
    "mul": {
        "NMU": (100, 68, 100, 80, 100, 100, 100, 100, 100),
        "iNALU": (100, 12, 12, 68, 4, 100, 100, 100, 100),
        "RealNPU": (0, 0, 0, 0, 12, 28, 84, 100, 8),
        "NALU": (0, 0, 52, 12, 60, 0, 84, 8, 0),
        "G-NALU": (0, 0, 16, 0, 32, 0, 16, 0, 0),
    },
    "div": {
        "iNALU": (0, 0, 0, 0, 100, 100, 20, 100, 0),
        "RealNPU": (32, 12, 4, 84, 88, 16, 4, 100, 0),
        "NPU": (0, 0, 0, 0, 88, 16, 4, 100, 0),
        "NALU": (0, 0, 0, 0, 0, 0, 0, 0, 0),
        "NAC*": (0, 16, 16, 8, 0, 0, 16, 8, 0),
    },
}

UNIT_FOR_OP = {"add": "DMU_add", "mul": "DMU_add", "sub": "DMU_sub", "div": "DMU_sub"}


def published_threshold(operation: str, range_name: str) -> float:
    idx = ("add", "sub", "mul", "div").index(operation)
    return THRESHOLDS[range_name][idx]
