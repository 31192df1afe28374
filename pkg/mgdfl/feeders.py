"""
mgdfl Feeders - Built-in IEEE radial test feeders.

Branch impedances are in ohms and bus loads in kW, as tabulated for the
12.66 kV IEEE 33-bus and 69-bus distribution systems. `branch_table()`
converts impedances to per-unit on FEEDER_BASE_KVA.
"""

from __future__ import annotations

FEEDER_BASE_KV = 12.66
FEEDER_BASE_KVA = 1000.0

# (from, to, r_ohm, x_ohm)
IEEE33_BRANCHES = (
    (1, 2, 0.0922, 0.0470), (2, 3, 0.4930, 0.2511), (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941), (5, 6, 0.8190, 0.7070), (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351), (8, 9, 1.0300, 0.7400), (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650), (11, 12, 0.3744, 0.1238), (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129), (14, 15, 0.5910, 0.5260), (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210), (17, 18, 0.7320, 0.5740), (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554), (20, 21, 0.4095, 0.4784), (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083), (23, 24, 0.8980, 0.7091), (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034), (26, 27, 0.2842, 0.1447), (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006), (29, 30, 0.5075, 0.2585), (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619), (32, 33, 0.3410, 0.5302),
)

# bus -> nominal active load (kW)
IEEE33_LOADS = {
    2: 100, 3: 90, 4: 120, 5: 60, 6: 60, 7: 200, 8: 200, 9: 60, 10: 60,
    11: 45, 12: 60, 13: 60, 14: 120, 15: 60, 16: 60, 17: 60, 18: 90,
    19: 90, 20: 90, 21: 90, 22: 90, 23: 90, 24: 420, 25: 420, 26: 60,
    27: 60, 28: 60, 29: 120, 30: 200, 31: 150, 32: 210, 33: 60,
}

IEEE69_BRANCHES = (
    (1, 2, 0.0005, 0.0012), (2, 3, 0.0005, 0.0012), (3, 4, 0.0015, 0.0036),
    (4, 5, 0.0251, 0.0294), (5, 6, 0.3660, 0.1864), (6, 7, 0.3811, 0.1941),
    (7, 8, 0.0922, 0.0470), (8, 9, 0.0493, 0.0251), (9, 10, 0.8190, 0.2707),
    (10, 11, 0.1872, 0.0619), (11, 12, 0.7114, 0.2351), (12, 13, 1.0300, 0.3400),
    (13, 14, 1.0440, 0.3450), (14, 15, 1.0580, 0.3496), (15, 16, 0.1966, 0.0650),
    (16, 17, 0.3744, 0.1238), (17, 18, 0.0047, 0.0016), (18, 19, 0.3276, 0.1083),
    (19, 20, 0.2106, 0.0690), (20, 21, 0.3416, 0.1129), (21, 22, 0.0140, 0.0046),
    (22, 23, 0.1591, 0.0526), (23, 24, 0.3463, 0.1145), (24, 25, 0.7488, 0.2475),
    (25, 26, 0.3089, 0.1021), (26, 27, 0.1732, 0.0572), (3, 28, 0.0044, 0.0108),
    (28, 29, 0.0640, 0.1565), (29, 30, 0.3978, 0.1315), (30, 31, 0.0702, 0.0232),
    (31, 32, 0.3510, 0.1160), (32, 33, 0.8390, 0.2816), (33, 34, 1.7080, 0.5646),
    (34, 35, 1.4740, 0.4873), (3, 36, 0.0044, 0.0108), (36, 37, 0.0640, 0.1565),
    (37, 38, 0.1053, 0.1230), (38, 39, 0.0304, 0.0355), (39, 40, 0.0018, 0.0021),
    (40, 41, 0.7283, 0.8509), (41, 42, 0.3100, 0.3623), (42, 43, 0.0410, 0.0478),
    (43, 44, 0.0092, 0.0116), (44, 45, 0.1089, 0.1373), (45, 46, 0.0009, 0.0012),
    (4, 47, 0.0034, 0.0084), (47, 48, 0.0851, 0.2083), (48, 49, 0.2898, 0.7091),
    (49, 50, 0.0822, 0.2011), (8, 51, 0.0928, 0.0473), (51, 52, 0.3319, 0.1114),
    (9, 53, 0.1740, 0.0886), (53, 54, 0.2030, 0.1034), (54, 55, 0.2842, 0.1447),
    (55, 56, 0.2813, 0.1433), (56, 57, 1.5900, 0.5337), (57, 58, 0.7837, 0.2630),
    (58, 59, 0.3042, 0.1006), (59, 60, 0.3861, 0.1172), (60, 61, 0.5075, 0.2585),
    (61, 62, 0.0974, 0.0496), (62, 63, 0.1450, 0.0738), (63, 64, 0.7105, 0.3619),
    (64, 65, 1.0410, 0.5302), (11, 66, 0.2012, 0.0611), (66, 67, 0.0047, 0.0014),
    (12, 68, 0.7394, 0.2444), (68, 69, 0.0047, 0.0016),
)

IEEE69_LOADS = {
    6: 2.6, 7: 40.4, 8: 75, 9: 30, 10: 28, 11: 145, 12: 145, 13: 8, 14: 8,
    16: 45.5, 17: 60, 18: 60, 20: 1, 21: 114, 22: 5, 24: 28, 26: 14, 27: 14,
    28: 26, 29: 26, 33: 14, 34: 19.5, 35: 6, 36: 26, 37: 26, 39: 24, 40: 24,
    41: 1.2, 43: 6, 45: 39.22, 46: 39.22, 48: 79, 49: 384.7, 50: 384.7,
    51: 40.5, 52: 3.6, 53: 4.35, 54: 26.4, 55: 24, 59: 100, 61: 1244,
    62: 32, 64: 227, 65: 59, 66: 18, 67: 18, 68: 28, 69: 28,
}

# device -> bus; the PCC sits at the slack bus
DEFAULT_PLACEMENT = {
    "ieee33": {"ess": 12, "pv": 25, "wt": 33},
    "ieee69": {"ess": 50, "pv": 61, "wt": 27},
}

FEEDERS = {
    "ieee33": (IEEE33_BRANCHES, IEEE33_LOADS),
    "ieee69": (IEEE69_BRANCHES, IEEE69_LOADS),
}


def impedance_base(base_kv: float = FEEDER_BASE_KV, base_kva: float = FEEDER_BASE_KVA) -> float:
    """Base impedance in ohms."""
    return base_kv ** 2 * 1000.0 / base_kva


def branch_table(name: str) -> list[tuple[int, int, float, float]]:
    """Branch rows (from, to, r_pu, x_pu) for a built-in feeder."""
    if name not in FEEDERS:
        raise KeyError(f"Unknown feeder: {name!r}")
    z = impedance_base()
    return [(f, t, r / z, x / z) for f, t, r, x in FEEDERS[name][0]]


def bus_loads(name: str) -> dict[int, float]:
    if name not in FEEDERS:
        raise KeyError(f"Unknown feeder: {name!r}")
    return {int(b): float(p) for b, p in FEEDERS[name][1].items()}
