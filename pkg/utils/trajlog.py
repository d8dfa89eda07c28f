"""Binary trajectory log.

Layout (little-endian): a 12-byte header ``<4sHHI`` holding magic b"TSTL",
format version, record size in bytes and record count, followed by packed
records of RECORD_DTYPE.
"""

import logging
import struct
from pathlib import Path

import numpy as np

from utils.errors import ContractViolation
from utils.simcore import ACTION_DIM, OBS_DIM
from utils.tables import write_csv

logger = logging.getLogger(__name__)

MAGIC = b"TSTL"
VERSION = 1
_HEADER = struct.Struct("<4sHHI")

RECORD_DTYPE = np.dtype([
    ("t", "<f8"),
    ("p", "<f8", (2,)),
    ("psi", "<f8"),
    ("v", "<f8", (2,)),
    ("omega", "<f8"),
    ("gait_phase", "<f8"),
    ("step_count", "<i8"),
    ("action", "<f4", (ACTION_DIM,)),
    ("obs", "<f4", (OBS_DIM,)),
    ("mu", "<f4"),
    ("roughness", "<f4"),
    ("n_stance", "u1"),
    ("n_saturated", "u1"),
    ("slip_norm", "<f4"),
    ("force_sq", "<f4"),
])


class TrajectoryLog:
    """Collects per-step records of one robot."""

    def __init__(self):
        self._rows = []

    def __len__(self):
        return len(self._rows)

    def append(self, t, state_row, action, obs, e, contact_row):
        rec = np.zeros((), dtype=RECORD_DTYPE)
        rec["t"] = t
        rec["p"] = state_row["p"]
        rec["psi"] = state_row["psi"]
        rec["v"] = state_row["v"]
        rec["omega"] = state_row["omega"]
        rec["gait_phase"] = state_row["gait_phase"]
        rec["step_count"] = state_row["step_count"]
        rec["action"] = action
        rec["obs"] = obs
        rec["mu"], rec["roughness"] = e
        rec["n_stance"] = int(np.sum(contact_row["stance"]))
        rec["n_saturated"] = int(np.sum(contact_row["saturated"]))
        rec["slip_norm"] = float(np.linalg.norm(contact_row["slip"], axis=-1).sum())
        rec["force_sq"] = float(np.sum(np.asarray(contact_row["force"]) ** 2))
        self._rows.append(rec)

    def append_from_venv(self, venv, env_id, action, obs, info, contact):
        """Records env `env_id` after a VecEnv step (pre-reset state)."""
        prev = info["prev_state"]
        dt = venv.cfg.dt
        state_row = {
            "p": prev.p[env_id], "psi": prev.psi[env_id], "v": prev.v[env_id],
            "omega": prev.omega[env_id], "gait_phase": prev.gait_phase[env_id],
            "step_count": prev.step_count[env_id],
        }
        contact_row = {k: getattr(contact, k)[env_id] for k in ("stance", "saturated", "slip", "force")}
        self.append(prev.step_count[env_id] * dt, state_row, action, obs, info["e"][env_id], contact_row)

    def records(self):
        if not self._rows:
            return np.zeros(0, dtype=RECORD_DTYPE)
        return np.stack(self._rows).astype(RECORD_DTYPE)


def write_log(path, records):
    records = np.ascontiguousarray(records, dtype=RECORD_DTYPE)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, RECORD_DTYPE.itemsize, len(records)))
        f.write(records.tobytes())
    logger.debug("[SIM] Wrote %d trajectory records to %s", len(records), path)
    return path


def read_log(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ContractViolation(f"Trajectory log {path} is truncated.")
    magic, version, size, count = _HEADER.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise ContractViolation(f"{path} is not a version {VERSION} trajectory log.")
    if size != RECORD_DTYPE.itemsize or len(data) != _HEADER.size + size * count:
        raise ContractViolation(f"Trajectory log {path} has an unexpected record layout.")
    return np.frombuffer(data, dtype=RECORD_DTYPE, offset=_HEADER.size, count=count).copy()


def export_csv(path, records):
    """Flattens records into one CSV column per scalar."""
    header = []
    for name in RECORD_DTYPE.names:
        shape = RECORD_DTYPE.fields[name][0].shape
        if shape:
            header.extend(f"{name}_{i}" for i in range(int(np.prod(shape))))
        else:
            header.append(name)
    rows = []
    for rec in records:
        row = []
        for name in RECORD_DTYPE.names:
            value = rec[name]
            if np.ndim(value):
                row.extend(float(x) for x in np.ravel(value))
            elif np.issubdtype(np.asarray(value).dtype, np.integer):
                row.append(int(value))
            else:
                row.append(float(value))
        rows.append(row)
    return write_csv(path, header, rows)
