"""Linear-interpolation bootstrap followed by iterative forest refinement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forest import forest_fit


def linear_interp_init(series: np.ndarray) -> np.ndarray:
    """Fill NaN gaps column-wise: linear inside, nearest observed value at the edges.

    A column with no observed value is returned unchanged (still NaN).
    """
    x = np.array(series, dtype=np.float64)
    cols = x[:, None] if x.ndim == 1 else x
    t = np.arange(cols.shape[0])
    for j in range(cols.shape[1]):
        obs = ~np.isnan(cols[:, j])
        if obs.all() or not obs.any():
            continue
        cols[:, j] = np.interp(t, t[obs], cols[obs, j])
    return x


def neighbor_interp(col: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Interpolate each row from the nearest observed rows strictly before and after it.

    For observed rows this is a leave-one-out estimate, so a model can learn how
    far the truth sits from the interpolation without seeing the answer.
    """
    n = col.size
    obs_idx = np.flatnonzero(observed)
    t = np.arange(n)
    if obs_idx.size == 0:
        return np.full(n, np.nan)
    if obs_idx.size == 1:
        return np.full(n, col[obs_idx[0]])
    lo = np.searchsorted(obs_idx, t, side="left") - 1
    hi = np.searchsorted(obs_idx, t, side="right")
    has_lo, has_hi = lo >= 0, hi < obs_idx.size
    pl = obs_idx[np.clip(lo, 0, obs_idx.size - 1)]
    ph = obs_idx[np.clip(hi, 0, obs_idx.size - 1)]
    vl, vh = col[pl], col[ph]
    w = np.where(ph != pl, (t - pl) / np.where(ph != pl, ph - pl, 1), 0.0)
    both = vl + w * (vh - vl)
    return np.where(has_lo & has_hi, both, np.where(has_lo, vl, vh))


@dataclass
class ImputeReport:
    imputed_mask: np.ndarray
    iterations_used: int = 0
    round_limit: int = 0
    change_norms: list = field(default_factory=list)
    validation_rmse: list = field(default_factory=list)
    transposed_columns: tuple = ()
    fallback_columns: tuple = ()


class _Scaler:
    def __init__(self, lo, span):
        self.lo, self.span = lo, span

    def fwd(self, x):
        return (x - self.lo) / self.span

    def inv(self, z):
        return z * self.span + self.lo


def _column_scaler(table, donors):
    stacked = table if not donors else np.vstack([table] + list(donors))
    with np.errstate(all="ignore"):
        lo = np.nanmin(np.where(np.isnan(stacked), np.inf, stacked), axis=0)
        hi = np.nanmax(np.where(np.isnan(stacked), -np.inf, stacked), axis=0)
    lo = np.where(np.isfinite(lo), lo, 0.0)
    hi = np.where(np.isfinite(hi), hi, 1.0)
    span = np.where(hi - lo > 1e-12, hi - lo, 1.0)
    return _Scaler(lo, span)


def _fill_from_donors(work, j, donors_scaled, forest_kw, seed):
    """Row-wise model for a column with no observations: pool donor rows as training set."""
    others = [k for k in range(work.shape[1]) if k != j]
    xs, ys = [], []
    for dtab in donors_scaled:
        filled = linear_interp_init(dtab)
        ok = ~np.isnan(dtab[:, j]) & ~np.isnan(filled[:, others]).any(axis=1)
        xs.append(filled[ok][:, others])
        ys.append(dtab[ok, j])
    x, y = np.vstack(xs), np.concatenate(ys)
    if y.size < forest_kw["min_leaf"]:
        return False
    f = forest_fit(x, y, seed=seed, **forest_kw)
    work[:, j] = f.predict(work[:, others])
    return True


def _refine(work, missing, observed, order, limit, tol, forest_kw, seed, loo, truth=None, val=None):
    """Run up to ``limit`` rounds in place. Returns (rounds, change norms, val rmse per round)."""
    norms, vals = [], []
    if truth is not None:
        vals.append(float(np.sqrt(np.mean((work[val] - truth) ** 2))))
    rounds = 0
    for _ in range(limit):
        prev = work.copy()
        for j in order:
            rows_fit = observed[:, j]
            rows_pred = missing[:, j]
            others = [k for k in range(work.shape[1]) if k != j]
            feats = np.column_stack([work[:, others], loo[:, j]])
            f = forest_fit(feats[rows_fit], work[rows_fit, j],
                           seed=int(np.random.SeedSequence([seed, j]).generate_state(1)[0]),
                           **forest_kw)
            work[rows_pred, j] = f.predict(feats[rows_pred])
        rounds += 1
        change = float(np.max(np.abs(work - prev)[missing])) if missing.any() else 0.0
        norms.append(change)
        if truth is not None:
            vals.append(float(np.sqrt(np.mean((work[val] - truth) ** 2))))
        if change < tol:
            break
    return rounds, norms, vals


def iterative_impute(table, n_trees: int = 50, max_depth: int = 10, min_leaf: int = 5,
                     tol: float = 1e-4, max_rounds: int = 10, val_fraction: float = 0.05,
                     seed: int = 0, donors=None):
    """Impute NaN cells of a rows x features table.

    Features are refined in ascending order of missingness; each round refits a
    forest per feature on its observed rows and re-predicts its missing cells.
    The round limit is chosen by hiding ``val_fraction`` of observed cells and
    keeping the round count (0 allowed) with the lowest error on them.

    Columns with no observed cell are filled by a forest trained on ``donors``
    (tables with the same columns, e.g. other nodes) when given; otherwise with
    the scaled midpoint and reported as fallback columns.
    """
    raw = np.array(table, dtype=np.float64)
    missing = np.isnan(raw)
    report = ImputeReport(imputed_mask=missing.copy())
    if not missing.any():
        return raw, report
    donors = [np.asarray(d, dtype=np.float64) for d in (donors or [])]
    sc = _column_scaler(raw, donors)
    z = sc.fwd(raw)
    forest_kw = dict(n_trees=n_trees, max_depth=max_depth, min_leaf=min_leaf)
    n, d = z.shape
    n_obs = (~missing).sum(axis=0)
    empty = np.flatnonzero(n_obs == 0)

    work = linear_interp_init(z)
    transposed, fallback = [], []
    donors_z = [sc.fwd(dt) for dt in donors]
    for j in empty:
        tmp = np.nan_to_num(work, nan=0.5)
        if donors_z and _fill_from_donors(tmp, j, donors_z, forest_kw, seed):
            work[:, j] = tmp[:, j]
            transposed.append(int(j))
        else:
            work[:, j] = 0.5
            fallback.append(int(j))
    report.transposed_columns = tuple(transposed)
    report.fallback_columns = tuple(fallback)

    order = [int(j) for j in np.argsort(missing.sum(axis=0), kind="stable")
             if 0 < missing[:, j].sum() and n_obs[j] >= max(2 * min_leaf, 2)]
    loo = np.column_stack([neighbor_interp(z[:, j], ~missing[:, j]) for j in range(d)])
    loo = np.where(np.isnan(loo), work, loo)

    limit = max_rounds
    if order and max_rounds > 0 and val_fraction > 0:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
        cand = np.argwhere(~missing & np.isin(np.arange(d), order)[None, :])
        n_val = int(round(val_fraction * len(cand)))
        if n_val >= 1:
            pick = cand[rng.choice(len(cand), size=n_val, replace=False)]
            val = np.zeros_like(missing)
            val[pick[:, 0], pick[:, 1]] = True
            miss_v = missing | val
            ok_cols = [j for j in order if (~miss_v[:, j]).sum() >= max(2 * min_leaf, 2)]
            zv = np.where(val, np.nan, z)
            work_v = linear_interp_init(zv)
            for j in range(d):
                if np.isnan(work_v[:, j]).all():
                    work_v[:, j] = work[:, j]
            loo_v = np.column_stack([neighbor_interp(zv[:, j], ~miss_v[:, j]) for j in range(d)])
            loo_v = np.where(np.isnan(loo_v), work_v, loo_v)
            _, _, vals = _refine(work_v, miss_v, ~miss_v, ok_cols, max_rounds, tol, forest_kw,
                                 seed, loo_v, truth=z[val], val=val)
            report.validation_rmse = vals
            limit = int(np.argmin(vals))
    report.round_limit = limit
    refine_mask = np.zeros_like(missing)
    refine_mask[:, order] = missing[:, order]
    rounds, norms, _ = _refine(work, refine_mask, ~missing, order, limit, tol, forest_kw, seed, loo)
    report.iterations_used = rounds
    report.change_norms = norms
    out = sc.inv(work)
    out[~missing] = raw[~missing]
    return out, report
