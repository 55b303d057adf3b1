"""Versioned npz caches for belief sets, kernels, and solved policies.

Cache files are keyed by the parameters that determine their content (the
belief set by (N, p_s, p_f, m), everything else by the full parameter set) and
carry a format version plus the key, both checked on load; a stale or foreign
file is ignored, never trusted.
"""

from __future__ import annotations

import os
import secrets
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .belief import BeliefSet, canonical_key
from .belief_mdp import Kernel, StateSpace
from .model import ModelParams
from .solver import RviaSolution

CACHE_VERSION = 1


def _save(path: Path, payload: dict) -> None:
    # write-then-rename, with a per-writer tmp name: concurrent sweep workers
    # may save the same key simultaneously and both renames must succeed
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.stem}.{os.getpid()}.{secrets.token_hex(4)}.npz")
    np.savez_compressed(tmp, version=CACHE_VERSION, **payload)
    os.replace(tmp, path)


def _load(path: Path, key: str):
    if not path.is_file():
        return None
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError):
        return None
    if int(z["version"]) != CACHE_VERSION or str(z["key"]) != key:
        return None
    return z


def belief_set_path(cache_dir, params: ModelParams) -> Path:
    return Path(cache_dir) / f"bset_{params.belief_key()}.npz"


def save_belief_set(cache_dir, params: ModelParams, bset: BeliefSet) -> None:
    lut_keys = np.array([list(k) for k in bset.lut], dtype=np.int64).reshape(-1, bset.n)
    lut_vals = np.array([bset.lut[k] for k in bset.lut], dtype=np.int64)
    _save(
        belief_set_path(cache_dir, params),
        dict(
            key=params.belief_key(),
            n=bset.n,
            m=bset.m,
            u1=bset.u1,
            u2=bset.u2,
            members=bset.members,
            nack_next=bset.nack_next,
            depths=bset.depths,
            lut_keys=lut_keys,
            lut_vals=lut_vals,
        ),
    )


def load_belief_set(cache_dir, params: ModelParams) -> BeliefSet | None:
    z = _load(belief_set_path(cache_dir, params), params.belief_key())
    if z is None:
        return None
    members = z["members"]
    index = {canonical_key(members[i]): i for i in range(members.shape[0])}
    lut = {
        tuple(k): int(v) for k, v in zip(z["lut_keys"], z["lut_vals"])
    }
    return BeliefSet(
        n=int(z["n"]),
        m=int(z["m"]),
        u1=float(z["u1"]),
        u2=float(z["u2"]),
        members=members,
        index=index,
        lut=lut,
        nack_next=z["nack_next"],
        depths=z["depths"],
        key=params.belief_key(),
    )


def kernel_path(cache_dir, params: ModelParams) -> Path:
    return Path(cache_dir) / f"kernel_{params.key()}.npz"


def save_kernel(cache_dir, params: ModelParams, space: StateSpace, kernel: Kernel) -> None:
    _save(
        kernel_path(cache_dir, params),
        dict(
            key=params.key(),
            meta=np.array([space.n_states, space.battery, space.n_beliefs]),
            states=np.stack([space.x, space.b, space.r, space.f, space.xp], axis=1),
            p0_indptr=kernel.p0.indptr,
            p0_indices=kernel.p0.indices,
            p0_data=kernel.p0.data,
            p1_indptr=kernel.p1.indptr,
            p1_indices=kernel.p1.indices,
            p1_data=kernel.p1.data,
        ),
    )


def load_kernel(cache_dir, params: ModelParams):
    z = _load(kernel_path(cache_dir, params), params.key())
    if z is None:
        return None
    n, battery, n_beliefs = (int(v) for v in z["meta"])
    st = z["states"]
    x, b, r, f, xp = (st[:, i].copy() for i in range(5))
    id_lookup = np.full((n, battery + 1, n_beliefs, 2, n), -1, dtype=np.int64)
    id_lookup[x - 1, b, r, f, xp - 1] = np.arange(st.shape[0])
    space = StateSpace(
        n_states=n, battery=battery, n_beliefs=n_beliefs,
        x=x, b=b, r=r, f=f, xp=xp, id_lookup=id_lookup,
    )
    s = st.shape[0]
    kernel = Kernel(
        p0=sp.csr_matrix((z["p0_data"], z["p0_indices"], z["p0_indptr"]), shape=(s, s)),
        p1=sp.csr_matrix((z["p1_data"], z["p1_indices"], z["p1_indptr"]), shape=(s, s)),
        transmit_ok=b >= 1,
    )
    return space, kernel


def solution_path(cache_dir, params: ModelParams, epsilon: float, l_ref: int) -> Path:
    return Path(cache_dir) / f"rvia_{params.key()}_eps{epsilon:.6g}_ref{l_ref}.npz"


def save_solution(cache_dir, params: ModelParams, sol: RviaSolution) -> None:
    _save(
        solution_path(cache_dir, params, sol.epsilon, sol.l_ref),
        dict(
            key=params.key(),
            policy=sol.policy,
            h=sol.h,
            scalars=np.array([sol.gain, sol.residual, sol.epsilon]),
            ints=np.array([sol.iterations, sol.l_ref]),
        ),
    )


def load_solution(cache_dir, params: ModelParams, epsilon: float, l_ref: int):
    z = _load(solution_path(cache_dir, params, epsilon, l_ref), params.key())
    if z is None:
        return None
    gain, residual, eps = (float(v) for v in z["scalars"])
    iterations, ref = (int(v) for v in z["ints"])
    return RviaSolution(
        policy=z["policy"], gain=gain, h=z["h"], iterations=iterations,
        residual=residual, l_ref=ref, epsilon=eps,
    )
