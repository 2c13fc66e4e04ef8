"""Implied sparse factor structure of the simultaneous coefficient matrix.

The SVD Gamma = L D F maps the structural model to a mean-adjusted factor
model y = alpha + L*phi + nu with phi = D F y. The parental-set partition
fixes the sparsity: each score row is supported on one common parental set
and the matching loadings column on that set's children. Canonicalization
resolves the SVD's sign, ordering, and cross-time matching ambiguities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._util import weighted_quantile
from .engine import SUMMARY_QS, JointMoments
from .errors import NumericalError, StructuralInputError
from .structure import ParentalPartition, phi_blocks, structural_rank

#: entries of orthonormal rows/columns below this are treated as structural zeros
SUPPORT_TOL = 1e-10


@dataclass(frozen=True)
class FactorDecomposition:
    """Canonicalizable SVD triple with sparsity metadata.

    ``set_assignment[k]`` is the index of the parental set supporting score
    row k; ``reference_pattern`` is the boolean (p, q) support the rows are
    matched against.
    """

    L: np.ndarray
    D: np.ndarray
    Fmat: np.ndarray
    p: int
    set_assignment: tuple[int, ...]
    reference_pattern: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.L * self.D) @ self.Fmat


@dataclass(frozen=True)
class FactorSeries:
    """Factor trajectories phi_t = D_t F_t y_t with singular-value paths."""

    times: tuple
    phi: np.ndarray
    singular_values: np.ndarray
    set_assignment: tuple[int, ...]


def _row_support(row: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.abs(row) > SUPPORT_TOL)


def _assign_sets(Fmat: np.ndarray, part: ParentalPartition) -> tuple[int, ...]:
    assignment = []
    member_sets = [set(s) for s in part.sets]
    for k, row in enumerate(Fmat):
        support = set(_row_support(row).tolist())
        if not support:
            raise NumericalError(f"score row {k} has empty support")
        homes = [h for h, members in enumerate(member_sets) if support <= members]
        if len(homes) != 1:
            raise NumericalError(
                f"score row {k} support {sorted(support)} does not sit inside "
                "exactly one parental set"
            )
        assignment.append(homes[0])
    return tuple(assignment)


def _pattern_from_assignment(assignment: Sequence[int], part: ParentalPartition, q: int) -> np.ndarray:
    pat = np.zeros((len(assignment), q), dtype=bool)
    for k, h in enumerate(assignment):
        pat[k, list(part.sets[h])] = True
    return pat


def structural_reference(part: ParentalPartition, q: int) -> np.ndarray:
    """Default reference pattern: sets in partition order, p_h rows each."""
    rows = []
    for h, members in enumerate(part.sets):
        row = np.zeros(q, dtype=bool)
        row[list(members)] = True
        rows.extend([row] * part.p_h[h])
    return np.array(rows) if rows else np.zeros((0, q), dtype=bool)


def svd_factorize(gamma: np.ndarray, part: ParentalPartition) -> FactorDecomposition:
    """SVD of the simultaneous matrix truncated at the partition-implied rank.

    The factor count is the structural rank when every parental-set block is
    numerically full rank, the numerical rank otherwise; singular values come
    out sorted descending (canonical ordering is a separate step).
    """
    gamma = np.asarray(gamma, dtype=float)
    q = gamma.shape[0]
    p_num, _full = structural_rank(part, phi_blocks(gamma, part))
    p = p_num
    if p == 0:
        return FactorDecomposition(
            L=np.zeros((q, 0)),
            D=np.zeros(0),
            Fmat=np.zeros((0, q)),
            p=0,
            set_assignment=(),
            reference_pattern=np.zeros((0, q), dtype=bool),
        )
    U, sv, Vt = np.linalg.svd(gamma)
    L, D, Fmat = U[:, :p], sv[:p], Vt[:p]
    assignment = _assign_sets(Fmat, part)
    return FactorDecomposition(
        L=L,
        D=D,
        Fmat=Fmat,
        p=p,
        set_assignment=assignment,
        reference_pattern=_pattern_from_assignment(assignment, part, q),
    )


def _match_reference(dec: FactorDecomposition, reference: np.ndarray) -> np.ndarray:
    """Permutation sending current factors onto reference rows with equal support."""
    p, q = dec.Fmat.shape
    if reference.shape != (p, q):
        raise StructuralInputError(
            f"reference pattern must be {(p, q)}, got {reference.shape}"
        )
    ref_keys = [tuple(np.flatnonzero(reference[r]).tolist()) for r in range(p)]
    cur_keys = [tuple(np.flatnonzero(dec.reference_pattern[k]).tolist()) for k in range(p)]
    slots: dict[tuple, list[int]] = {}
    for r, key in enumerate(ref_keys):
        slots.setdefault(key, []).append(r)
    perm = np.empty(p, dtype=int)
    for k, key in enumerate(cur_keys):
        if key not in slots or not slots[key]:
            raise StructuralInputError(
                "no permutation matches the factor supports to the reference pattern"
            )
        perm[slots[key].pop(0)] = k
    return perm


def canonicalize(dec: FactorDecomposition, reference: np.ndarray | None = None) -> FactorDecomposition:
    """Resolve SVD ambiguities in three ordered steps.

    (1) permute factors to match the reference zero/non-zero pattern;
    (2) flip signs so each score row's largest-magnitude entry is positive;
    (3) within each parental set, order factors by descending magnitude of
    their pivot score entries (greedy founder/pivot assignment).
    """
    if dec.p == 0:
        return dec
    ref = reference if reference is not None else dec.reference_pattern
    ref = np.asarray(ref, dtype=bool)
    perm = _match_reference(dec, ref)
    L = dec.L[:, perm].copy()
    D = dec.D[perm].copy()
    F = dec.Fmat[perm].copy()
    assignment = [dec.set_assignment[k] for k in perm]

    for k in range(dec.p):
        i_max = int(np.argmax(np.abs(F[k])))
        if F[k, i_max] < 0:
            F[k] = -F[k]
            L[:, k] = -L[:, k]

    order = np.arange(dec.p)
    for h in sorted(set(assignment)):
        slots = [k for k in range(dec.p) if assignment[k] == h]
        if len(slots) <= 1:
            continue
        cols = np.flatnonzero(ref[slots[0]])
        remaining_rows = list(slots)
        remaining_cols = list(cols)
        chosen = []
        while remaining_rows:
            sub = np.abs(F[np.ix_(remaining_rows, remaining_cols)])
            rpos, cpos = np.unravel_index(int(np.argmax(sub)), sub.shape)
            chosen.append(remaining_rows[rpos])
            del remaining_rows[rpos]
            if len(remaining_cols) > 1:
                del remaining_cols[cpos]
        order[slots] = chosen
    L = L[:, order]
    D = D[order]
    F = F[order]
    assignment = [assignment[k] for k in order]
    return FactorDecomposition(
        L=L, D=D, Fmat=F, p=dec.p, set_assignment=tuple(assignment), reference_pattern=ref
    )


def factor_series(
    gammas: Sequence[np.ndarray],
    ys: Sequence[np.ndarray],
    part: ParentalPartition,
    reference: np.ndarray | None = None,
    times: Sequence | None = None,
) -> FactorSeries:
    """Canonical factor trajectories from per-time coefficient estimates.

    The reference pattern is fixed from the first time point when not given,
    so factor identities stay matched across the whole period.
    """
    if len(gammas) != len(ys):
        raise StructuralInputError("need one y vector per coefficient matrix")
    times = tuple(times) if times is not None else tuple(range(len(gammas)))
    phi_rows, sv_rows = [], []
    ref = reference
    assignment: tuple[int, ...] = ()
    p0: int | None = None
    for gamma, y in zip(gammas, ys):
        raw = svd_factorize(gamma, part)
        if p0 is not None and raw.p != p0:
            raise NumericalError(
                f"factor count changed over time ({p0} -> {raw.p}); "
                "a rank-deficient fill broke the structural pattern"
            )
        dec = canonicalize(raw, ref)
        if ref is None:
            ref = dec.reference_pattern
        if p0 is None:
            p0 = dec.p
            assignment = dec.set_assignment
        phi_rows.append(dec.D * (dec.Fmat @ np.asarray(y, dtype=float)))
        sv_rows.append(dec.D)
    return FactorSeries(
        times=times,
        phi=np.array(phi_rows),
        singular_values=np.array(sv_rows),
        set_assignment=assignment,
    )


def factor_draw_quantiles(
    gamma_draws: np.ndarray,
    weights: np.ndarray,
    y: np.ndarray,
    part: ParentalPartition,
    reference: np.ndarray,
) -> np.ndarray:
    """Weighted per-factor quantile bands from a Monte Carlo coefficient ensemble
    at one time point (one SVD per draw)."""
    y = np.asarray(y, dtype=float)
    phis = []
    for gamma in gamma_draws:
        dec = canonicalize(svd_factorize(gamma, part), reference)
        phis.append(dec.D * (dec.Fmat @ y))
    phis = np.array(phis)
    out = np.empty((phis.shape[1], len(SUMMARY_QS)))
    for k in range(phis.shape[1]):
        out[k] = weighted_quantile(phis[:, k], weights, SUMMARY_QS)
    return out


def factor_covariances(dec: FactorDecomposition, joint: JointMoments) -> tuple[np.ndarray, np.ndarray]:
    """Factor covariance D F Omega^{-1} F' D and factor-residual cross-covariance
    D F (I - Gamma)^{-1} Lambda^{-1} (computed as D F Omega^{-1} (I - Gamma)')."""
    if dec.p == 0:
        q = joint.omega.shape[0]
        return np.zeros((0, 0)), np.zeros((0, q))
    q = joint.omega.shape[0]
    sign, logdet = np.linalg.slogdet(np.eye(q) - joint.gamma)
    if sign == 0 or not np.isfinite(logdet):
        raise NumericalError("I - Gamma is singular")
    W = dec.D[:, None] * dec.Fmat
    sigma_w = np.linalg.solve(joint.omega, W.T)
    v_phi = W @ sigma_w
    c_phi_nu = sigma_w.T @ (np.eye(q) - joint.gamma).T
    return 0.5 * (v_phi + v_phi.T), c_phi_nu
