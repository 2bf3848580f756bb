"""Compiled inner loops of the change-in-slope sampler.

Everything here works on flat numpy arrays so it can be compiled by numba.
Conventions shared by all kernels:

* Time indices are 1-based. ``theta[t - 1]`` is the mean parameter of time t.
* A configuration with ``ell`` change-points is held in ``knots`` with
  ``knots[0] == 1``, ``knots[1:ell + 1]`` the change-points and
  ``knots[ell + 1] == T``; entries beyond ``ell + 1`` are ignored.
* Replicates enter only through per-time sufficient statistics: ``xbar``
  (replicate mean) and ``ss`` (sum of squared deviations from ``xbar``),
  so ``sum_r (x_tr - m)**2 == ss_t + R * (xbar_t - m)**2``.
* Scalar hyperparameters travel in two packed vectors, ``fpar`` (floats)
  and ``ipar`` (ints), indexed by the ``F_*`` / ``I_*`` constants.
"""

import math

import numpy as np

from ._accel import njit

F_NU0 = 0
F_ALPHA = 1
F_B = 2
F_LAMBDA = 3
F_C = 4
F_ALPHA0 = 5
F_BETA0 = 6
N_FPAR = 7

I_L = 0
I_ELL_KIND = 1
I_SUPPORT_MAX = 2
I_D1 = 3
I_D2 = 4
I_USE_LIK = 5
I_VAR_MODE = 6
N_IPAR = 7

ELL_COMPLEXITY = 0
ELL_POISSON = 1

VAR_FIXED = 0
VAR_GIBBS_FREE = 1
VAR_GIBBS_SHARED = 2

# move outcome counters: (proposed, accepted) per move type
MV_BIRTH = 0
MV_DEATH = 1
MV_THETA = 2
MV_SHIFT_JOINT = 3
MV_SHIFT_SINGLE = 4
N_MOVES = 5

# per-series cache slots
C_QUAD = 0
C_LPTHETA = 1
C_CONST = 2

LOG_2PI = math.log(2.0 * math.pi)
NEG_INF = -math.inf


# ---------------------------------------------------------------------------
# mean function and likelihood
# ---------------------------------------------------------------------------


@njit
def interp_mean(theta, a, b, t):
    """Mean at time t on the segment [a, b]; exact at both ends."""
    if t == a:
        return theta[a - 1]
    if t == b:
        return theta[b - 1]
    ta = theta[a - 1]
    return ta + (theta[b - 1] - ta) * (t - a) / (b - a)


@njit
def fill_mean(theta, knots, ell, out):
    out[0] = theta[0]
    for j in range(ell + 1):
        a = knots[j]
        b = knots[j + 1]
        for t in range(a + 1, b + 1):
            out[t - 1] = interp_mean(theta, a, b, t)


@njit
def seg_quad(xbar, ss, R, s2, theta, a, b):
    """Quadratic log-likelihood part of the observations at t in (a, b]."""
    acc = 0.0
    for t in range(a + 1, b + 1):
        d = xbar[t - 1] - interp_mean(theta, a, b, t)
        acc += (ss[t - 1] + R * d * d) / s2[t - 1]
    return -0.5 * acc


@njit
def loglik_quad(xbar, ss, R, s2, theta, knots, ell):
    d = xbar[0] - theta[0]
    out = -0.5 * (ss[0] + R * d * d) / s2[0]
    for j in range(ell + 1):
        out += seg_quad(xbar, ss, R, s2, theta, knots[j], knots[j + 1])
    return out


@njit
def loglik_const(R, s2):
    acc = 0.0
    for t in range(s2.shape[0]):
        acc += LOG_2PI + math.log(s2[t])
    return -0.5 * R * acc


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------


@njit
def log_prior_theta_quad(theta, mu0, s2, nu0):
    acc = 0.0
    for t in range(theta.shape[0]):
        d = theta[t] - mu0[t]
        acc += d * d / s2[t]
    return -0.5 * nu0 * acc


@njit
def log_prior_theta_full(theta, mu0, s2, nu0):
    acc = 0.0
    for t in range(theta.shape[0]):
        acc += LOG_2PI + math.log(s2[t] / nu0)
    return -0.5 * acc + log_prior_theta_quad(theta, mu0, s2, nu0)


@njit
def log_prior_tau(knots, ell, T):
    """Ordered-uniform location prior; -inf outside 1 < t_1 < ... < t_ell < T."""
    if ell == 0:
        return 0.0
    prev = 1
    for j in range(1, ell + 1):
        t = knots[j]
        if t <= prev or t >= T:
            return NEG_INF
        prev = t
    out = -math.log(T - ell - 1)
    for j in range(2, ell + 1):
        out -= math.log(T - ell + j - knots[j - 1] - 1)
    return out


@njit
def log_prior_ell(ell, T, fpar, ipar):
    if ell < 0 or ell > ipar[I_L]:
        return NEG_INF
    if ipar[I_ELL_KIND] == ELL_COMPLEXITY:
        if ell == 0:
            return 0.0
        return -fpar[F_ALPHA] * ell * math.log(fpar[F_B] * (T - 2) / ell)
    if ell > ipar[I_SUPPORT_MAX]:
        return NEG_INF
    lam = fpar[F_LAMBDA]
    return ell * math.log(lam) - lam - math.lgamma(ell + 1.0)


@njit
def p_add(ell, L):
    if ell >= L:
        return 0.0
    if ell == 0:
        return 1.0
    return 0.5


# ---------------------------------------------------------------------------
# moves
# ---------------------------------------------------------------------------


@njit
def _accept(log_alpha, rng):
    u = rng.random()
    if log_alpha >= 0.0:
        return True
    return u < math.exp(log_alpha)


@njit
def birth_log_alpha(dlik, lp_tau_big, lp_tau_small, ell_small, T, gap, fpar, ipar):
    """Log acceptance ratio for adding one change-point to an ``ell_small`` state.

    ``gap`` is the distance between the two knots that bracket the new point.
    """
    L = ipar[I_L]
    return (
        dlik
        + lp_tau_big
        - lp_tau_small
        + log_prior_ell(ell_small + 1, T, fpar, ipar)
        - log_prior_ell(ell_small, T, fpar, ipar)
        + math.log(1.0 - p_add(ell_small + 1, L))
        + math.log(gap - 1.0)
        - math.log(p_add(ell_small, L))
    )


@njit
def move_birth_death(theta, knots, ell, T, xbar, ss, R, s2, fpar, ipar, prop_knots, cache, rng):
    """Add or delete one change-point; theta is left untouched.

    Returns ``(ell_new, kind, accepted, log_alpha)`` with kind 1 for a birth
    proposal, -1 for a death proposal. The proposed configuration is left in
    ``prop_knots``.
    """
    use_lik = ipar[I_USE_LIK] != 0
    if ell == 0 and ipar[I_L] == 0:
        return ell, 0, False, NEG_INF
    if rng.random() < p_add(ell, ipar[I_L]):
        j = rng.integers(0, ell + 1)
        a = knots[j]
        b = knots[j + 1]
        if b - a <= 1:
            return ell, 1, False, NEG_INF
        tstar = rng.integers(a + 1, b)
        for k in range(j + 1):
            prop_knots[k] = knots[k]
        prop_knots[j + 1] = tstar
        for k in range(j + 1, ell + 2):
            prop_knots[k + 1] = knots[k]
        dlik = 0.0
        if use_lik:
            dlik = (seg_quad(xbar, ss, R, s2, theta, a, tstar)
                    + seg_quad(xbar, ss, R, s2, theta, tstar, b)
                    - seg_quad(xbar, ss, R, s2, theta, a, b))
        log_alpha = birth_log_alpha(
            dlik, log_prior_tau(prop_knots, ell + 1, T), log_prior_tau(knots, ell, T),
            ell, T, b - a, fpar, ipar)
        if _accept(log_alpha, rng):
            for k in range(ell + 3):
                knots[k] = prop_knots[k]
            cache[C_QUAD] += dlik
            return ell + 1, 1, True, log_alpha
        return ell, 1, False, log_alpha

    i = rng.integers(1, ell + 1)
    a = knots[i - 1]
    t = knots[i]
    b = knots[i + 1]
    for k in range(i):
        prop_knots[k] = knots[k]
    for k in range(i + 1, ell + 2):
        prop_knots[k - 1] = knots[k]
    dlik_birth = 0.0
    if use_lik:
        dlik_birth = (seg_quad(xbar, ss, R, s2, theta, a, t)
                      + seg_quad(xbar, ss, R, s2, theta, t, b)
                      - seg_quad(xbar, ss, R, s2, theta, a, b))
    log_alpha = -birth_log_alpha(
        dlik_birth, log_prior_tau(knots, ell, T), log_prior_tau(prop_knots, ell - 1, T),
        ell - 1, T, b - a, fpar, ipar)
    if _accept(log_alpha, rng):
        for k in range(ell + 1):
            knots[k] = prop_knots[k]
        cache[C_QUAD] -= dlik_birth
        return ell - 1, -1, True, log_alpha
    return ell, -1, False, log_alpha


@njit
def move_theta(theta, knots, ell, xbar, ss, R, s2, mu0, fpar, ipar, prop_theta, cache, rng):
    """Gaussian random walk on every theta at once; returns (accepted, log_alpha)."""
    T = theta.shape[0]
    c = fpar[F_C]
    nu0 = fpar[F_NU0]
    for t in range(T):
        prop_theta[t] = theta[t] + math.sqrt(c * s2[t]) * rng.standard_normal()
    quad_new = 0.0
    if ipar[I_USE_LIK] != 0:
        quad_new = loglik_quad(xbar, ss, R, s2, prop_theta, knots, ell)
    lpq_old = log_prior_theta_quad(theta, mu0, s2, nu0)
    lpq_new = log_prior_theta_quad(prop_theta, mu0, s2, nu0)
    log_alpha = (quad_new - cache[C_QUAD]) + (lpq_new - lpq_old)
    if _accept(log_alpha, rng):
        for t in range(T):
            theta[t] = prop_theta[t]
        cache[C_QUAD] = quad_new
        cache[C_LPTHETA] += lpq_new - lpq_old
        return True, log_alpha
    return False, log_alpha


@njit
def move_shift_joint(theta, knots, ell, T, xbar, ss, R, s2, fpar, ipar, prop_knots, cache, rng):
    """Shift every change-point by an independent uniform step in [-d1, d1]."""
    if ell == 0:
        return True, 0.0
    d1 = ipar[I_D1]
    prop_knots[0] = 1
    prop_knots[ell + 1] = T
    for i in range(1, ell + 1):
        prop_knots[i] = knots[i] + rng.integers(-d1, d1 + 1)
    lpt_new = log_prior_tau(prop_knots, ell, T)
    if lpt_new == NEG_INF:
        return False, NEG_INF
    quad_new = 0.0
    if ipar[I_USE_LIK] != 0:
        quad_new = loglik_quad(xbar, ss, R, s2, theta, prop_knots, ell)
    log_alpha = (quad_new - cache[C_QUAD]) + (lpt_new - log_prior_tau(knots, ell, T))
    if _accept(log_alpha, rng):
        for i in range(1, ell + 1):
            knots[i] = prop_knots[i]
        cache[C_QUAD] = quad_new
        return True, log_alpha
    return False, log_alpha


@njit
def move_shift_single(theta, knots, ell, T, xbar, ss, R, s2, fpar, ipar, prop_knots, cache, rng):
    """Shift one uniformly chosen change-point by a uniform step in [-d2, d2]."""
    if ell == 0:
        return True, 0.0
    d2 = ipar[I_D2]
    i = rng.integers(1, ell + 1)
    eps = rng.integers(-d2, d2 + 1)
    for k in range(ell + 2):
        prop_knots[k] = knots[k]
    old = knots[i]
    new = old + eps
    prop_knots[i] = new
    a = knots[i - 1]
    b = knots[i + 1]
    if new <= a or new >= b:
        return False, NEG_INF
    dlik = 0.0
    if ipar[I_USE_LIK] != 0:
        dlik = (seg_quad(xbar, ss, R, s2, theta, a, new) + seg_quad(xbar, ss, R, s2, theta, new, b)) - (
            seg_quad(xbar, ss, R, s2, theta, a, old) + seg_quad(xbar, ss, R, s2, theta, old, b))
    log_alpha = dlik + (log_prior_tau(prop_knots, ell, T) - log_prior_tau(knots, ell, T))
    if _accept(log_alpha, rng):
        knots[i] = new
        cache[C_QUAD] += dlik
        return True, log_alpha
    return False, log_alpha


@njit
def move_refresh_inactive(theta, knots, ell, s2, mu0, nu0, active, cache, rng):
    """Exact Gibbs draw of theta at every time-point that is not a knot."""
    T = theta.shape[0]
    for t in range(T):
        active[t] = False
    for k in range(ell + 2):
        active[knots[k] - 1] = True
    for t in range(T):
        if not active[t]:
            theta[t] = mu0[t] + math.sqrt(s2[t] / nu0) * rng.standard_normal()
    cache[C_LPTHETA] = log_prior_theta_full(theta, mu0, s2, nu0)


# ---------------------------------------------------------------------------
# variance full conditionals
# ---------------------------------------------------------------------------


@njit
def gibbs_rates(xbar, ss, R, theta, knots, ell, mu0, nu0, mean_buf, out):
    """Add this series' contribution to the inverse-gamma rate of every time-point."""
    fill_mean(theta, knots, ell, mean_buf)
    for t in range(theta.shape[0]):
        d = xbar[t] - mean_buf[t]
        e = theta[t] - mu0[t]
        out[t] += 0.5 * (ss[t] + R * d * d) + 0.5 * nu0 * e * e


@njit
def draw_inverse_gamma(shape, rates, out, rng):
    # IG(shape, rate) == rate / Gamma(shape, scale=1)
    for t in range(rates.shape[0]):
        out[t] = rates[t] / rng.gamma(shape, 1.0)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@njit
def refresh_cache(theta, knots, ell, xbar, ss, R, s2, mu0, fpar, ipar, cache):
    if ipar[I_USE_LIK] != 0:
        cache[C_QUAD] = loglik_quad(xbar, ss, R, s2, theta, knots, ell)
        cache[C_CONST] = loglik_const(R, s2)
    else:
        cache[C_QUAD] = 0.0
        cache[C_CONST] = 0.0
    cache[C_LPTHETA] = log_prior_theta_full(theta, mu0, s2, fpar[F_NU0])


@njit
def log_posterior(knots, ell, T, fpar, ipar, cache):
    return (cache[C_CONST] + cache[C_QUAD] + cache[C_LPTHETA]
            + log_prior_tau(knots, ell, T) + log_prior_ell(ell, T, fpar, ipar))


@njit
def count_records(n_iter, burn_in, thin):
    n = 0
    for m in range(1, n_iter + 1):
        if m > burn_in and m % thin == 0:
            n += 1
    return n


@njit
def _grow_int(buf, need):
    if need <= buf.shape[0]:
        return buf
    out = np.empty(max(need, 2 * buf.shape[0]), dtype=buf.dtype)
    out[:buf.shape[0]] = buf
    return out


@njit
def _grow_float(buf, need):
    if need <= buf.shape[0]:
        return buf
    out = np.empty(max(need, 2 * buf.shape[0]), dtype=buf.dtype)
    out[:buf.shape[0]] = buf
    return out


@njit
def sweep(n, theta, knots, ells, xbar, ss, R, s2, mu0, fpar, ipar,
          prop_knots, prop_theta, active, mean_buf, rate_buf, cache, counts, flags, rng):
    """One iteration of the move schedule for series n (variance step excluded for shared mode)."""
    T = theta.shape[1]
    th = theta[n]
    kn = knots[n]
    x_n = xbar[n]
    ss_n = ss[n]
    s2_n = s2[n]
    ca = cache[n]
    ell = ells[n]

    ell, kind, acc, _ = move_birth_death(th, kn, ell, T, x_n, ss_n, R, s2_n, fpar, ipar, prop_knots, ca, rng)
    if kind != 0:
        mv = MV_BIRTH if kind == 1 else MV_DEATH
        counts[n, mv, 0] += 1
        if acc:
            counts[n, mv, 1] += 1
    flags[0] = 1 if acc else 0

    acc, _ = move_theta(th, kn, ell, x_n, ss_n, R, s2_n, mu0, fpar, ipar, prop_theta, ca, rng)
    counts[n, MV_THETA, 0] += 1
    if acc:
        counts[n, MV_THETA, 1] += 1
    flags[1] = 1 if acc else 0

    if rng.random() < 0.5:
        acc, _ = move_shift_joint(th, kn, ell, T, x_n, ss_n, R, s2_n, fpar, ipar, prop_knots, ca, rng)
        mv = MV_SHIFT_JOINT
        flags[3] = 0
    else:
        acc, _ = move_shift_single(th, kn, ell, T, x_n, ss_n, R, s2_n, fpar, ipar, prop_knots, ca, rng)
        mv = MV_SHIFT_SINGLE
        flags[3] = 1
    counts[n, mv, 0] += 1
    if acc:
        counts[n, mv, 1] += 1
    flags[2] = 1 if acc else 0

    move_refresh_inactive(th, kn, ell, s2_n, mu0, fpar[F_NU0], active, ca, rng)

    if ipar[I_VAR_MODE] == VAR_GIBBS_FREE:
        for t in range(T):
            rate_buf[t] = fpar[F_BETA0]
        gibbs_rates(x_n, ss_n, R, th, kn, ell, mu0, fpar[F_NU0], mean_buf, rate_buf)
        draw_inverse_gamma(0.5 * (R + 1) + fpar[F_ALPHA0], rate_buf, s2_n, rng)
        refresh_cache(th, kn, ell, x_n, ss_n, R, s2_n, mu0, fpar, ipar, ca)

    ells[n] = ell


@njit
def run_chains(xbar, ss, R, s2, mu0, fpar, ipar, theta, knots, ells, n_iter, burn_in, thin, rng):
    """Run ``n_iter`` sweeps over N series held in the leading axis of every array.

    ``theta`` (N, T), ``knots`` (N, L + 2), ``ells`` (N,) and ``s2`` (N, T)
    are updated in place and hold the final state on return. For the
    shared-Gibbs variance mode all N series advance in lockstep and the
    common variance is redrawn after every sweep; for all other modes the
    series never interact.

    Returns ``(rec_iter, rec_ell, rec_logpost, rec_flags, rec_ptr, knot_buf,
    theta_buf, counts)``; record ``m`` of series ``n`` keeps its knots in
    ``knot_buf[rec_ptr[m, n]:rec_ptr[m, n] + rec_ell[m, n] + 2]`` and the
    matching theta values at the same offsets of ``theta_buf``.
    """
    N = theta.shape[0]
    T = theta.shape[1]
    L = ipar[I_L]

    prop_knots = np.empty(L + 3, dtype=np.int64)
    prop_theta = np.empty(T, dtype=np.float64)
    active = np.zeros(T, dtype=np.bool_)
    mean_buf = np.empty(T, dtype=np.float64)
    rate_buf = np.empty(T, dtype=np.float64)
    flags = np.zeros(4, dtype=np.int8)
    cache = np.zeros((N, 3), dtype=np.float64)
    counts = np.zeros((N, N_MOVES, 2), dtype=np.int64)

    for n in range(N):
        refresh_cache(theta[n], knots[n], ells[n], xbar[n], ss[n], R, s2[n], mu0, fpar, ipar, cache[n])

    n_rec = count_records(n_iter, burn_in, thin)
    rec_iter = np.empty(n_rec, dtype=np.int64)
    rec_ell = np.empty((n_rec, N), dtype=np.int64)
    rec_logpost = np.empty((n_rec, N), dtype=np.float64)
    rec_flags = np.empty((n_rec, N, 4), dtype=np.int8)
    rec_ptr = np.empty((n_rec, N), dtype=np.int64)
    knot_buf = np.empty(max(16, n_rec * N * 4), dtype=np.int64)
    theta_buf = np.empty(knot_buf.shape[0], dtype=np.float64)
    used = 0
    r = 0

    shared = ipar[I_VAR_MODE] == VAR_GIBBS_SHARED
    shape_shared = 0.5 * N * (R + 1) + fpar[F_ALPHA0]

    for m in range(1, n_iter + 1):
        record = m > burn_in and m % thin == 0
        if record:
            rec_iter[r] = m
        for n in range(N):
            sweep(n, theta, knots, ells, xbar, ss, R, s2, mu0, fpar, ipar,
                  prop_knots, prop_theta, active, mean_buf, rate_buf, cache, counts, flags, rng)
            if record:
                for k in range(4):
                    rec_flags[r, n, k] = flags[k]
        if shared:
            for t in range(T):
                rate_buf[t] = fpar[F_BETA0]
            for n in range(N):
                gibbs_rates(xbar[n], ss[n], R, theta[n], knots[n], ells[n], mu0, fpar[F_NU0], mean_buf, rate_buf)
            draw_inverse_gamma(shape_shared, rate_buf, s2[0], rng)
            for n in range(N):
                if n > 0:
                    for t in range(T):
                        s2[n, t] = s2[0, t]
                refresh_cache(theta[n], knots[n], ells[n], xbar[n], ss[n], R, s2[n], mu0, fpar, ipar, cache[n])
        if record:
            for n in range(N):
                ell = ells[n]
                need = used + ell + 2
                knot_buf = _grow_int(knot_buf, need)
                theta_buf = _grow_float(theta_buf, need)
                rec_ptr[r, n] = used
                for k in range(ell + 2):
                    knot_buf[used + k] = knots[n, k]
                    theta_buf[used + k] = theta[n, knots[n, k] - 1]
                used = need
                rec_ell[r, n] = ell
                rec_logpost[r, n] = log_posterior(knots[n], ell, T, fpar, ipar, cache[n])
            r += 1

    return (rec_iter, rec_ell, rec_logpost, rec_flags, rec_ptr,
            knot_buf[:used].copy(), theta_buf[:used].copy(), counts)
