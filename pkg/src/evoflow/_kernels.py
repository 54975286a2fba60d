"""Compiled fixed-step integration kernel for matrix-game scenarios.

The closed-loop field costs a few dozen flops on desk-scale problems, so a
pure numpy step is dominated by per-call overhead. This module fuses the
whole RK4 loop (stages, clamping, renormalization, event tracking and
recording) into one numba kernel. The reference implementation lives in
:mod:`evoflow.solver`; the two are cross-checked in the test suite and the
solver falls back to the reference path whenever a scenario is outside this
kernel's reach (general reward families, adaptive stepping).

Environment kinds: 0 constant response, 1 best response (``beta > 0``
switches to the softmax smoothing), 2 out-migration with static capacities,
3 out-migration with sinusoidal capacities.
"""

import numpy as np
from numba import njit

# Event codes shared with the solver.
EV_RENORMALIZE = 0
EV_ARGMAX_CHANGE = 1


@njit(cache=True)
def _response_matrix(eta, phi_const, phi_state, env_kind, alpha, kappa, tie_tol,
                     beta, nbr, pi_buf, out):
    nh = eta.shape[0]
    if env_kind == 0:
        for h in range(nh):
            for k in range(nh):
                out[h, k] = phi_const[h, k]
    elif env_kind == 1:
        for h in range(nh):
            pi_buf[h] = alpha[h] * (1.0 - eta[h] / kappa[h])
            for k in range(nh):
                out[h, k] = 0.0
        for k in range(nh):
            best = -1.0e300
            found = False
            for z in range(nh):
                if nbr[z, k]:
                    found = True
                    if pi_buf[z] > best:
                        best = pi_buf[z]
            if not found:
                continue
            if beta > 0.0:
                tot = 0.0
                for h in range(nh):
                    if nbr[h, k]:
                        w = np.exp(beta * (pi_buf[h] - best))
                        out[k, h] = w
                        tot += w
                for h in range(nh):
                    out[k, h] /= tot
            else:
                cnt = 0
                for h in range(nh):
                    if nbr[h, k] and pi_buf[h] >= best - tie_tol:
                        cnt += 1
                inv = 1.0 / cnt
                for h in range(nh):
                    if nbr[h, k] and pi_buf[h] >= best - tie_tol:
                        out[k, h] = inv
    else:
        for h in range(nh):
            for k in range(nh):
                out[h, k] = phi_state[h, k]


@njit(cache=True)
def _field(xs, ps, ts, A, W, Lam, env_kind, alpha, kappa, tie_tol, beta, m,
           gamma, rho, phase, nbr, phi_buf, pi_buf, y_buf, eta_buf, r_buf,
           G_buf, g_buf, ow_buf, dx_out, dphi_out):
    na, nh = xs.shape
    for i in range(na):
        s = 0.0
        for h in range(nh):
            s += xs[i, h]
        y_buf[i] = s
    for h in range(nh):
        s = 0.0
        for i in range(na):
            s += xs[i, h]
        eta_buf[h] = s

    # ps doubles as the constant response for kind 0 and the evolving
    # response state for kinds 2 and 3
    _response_matrix(eta_buf, ps, ps, env_kind, alpha, kappa, tie_tol, beta,
                     nbr, pi_buf, phi_buf)

    for i in range(na):
        s = 0.0
        for j in range(na):
            s += A[i, j] * y_buf[j]
        r_buf[i] = s
    for i in range(na):
        for h in range(nh):
            s = 0.0
            for k in range(nh):
                s += xs[i, k] * W[h, k]
            G_buf[i, h] = s
    for h in range(nh):
        s = 0.0
        for i in range(na):
            s += r_buf[i] * G_buf[i, h]
        g_buf[h] = s
    for h in range(nh):
        s = 0.0
        for k in range(nh):
            s += Lam[h, k] * phi_buf[h, k]
        ow_buf[h] = s
    for i in range(na):
        for h in range(nh):
            mig = 0.0
            for k in range(nh):
                mig += Lam[k, h] * phi_buf[k, h] * xs[i, k]
            dx_out[i, h] = (mig - xs[i, h] * ow_buf[h]
                            + eta_buf[h] * G_buf[i, h] * r_buf[i]
                            - xs[i, h] * g_buf[h])

    if env_kind >= 2:
        for h in range(nh):
            if env_kind == 3:
                cap = gamma * np.sin(ts + phase[h]) + rho
            else:
                cap = kappa[h]
            fac = 1.0 - eta_buf[h] / cap
            for k in range(nh):
                dphi_out[h, k] = (ps[h, k] - m) * fac * ps[h, k]


@njit(cache=True)
def _argmax_fingerprint(x, phi_const, phi_state, env_kind, alpha, kappa,
                        tie_tol, nbr, pi_buf, phi_buf, eta_buf):
    na, nh = x.shape
    for h in range(nh):
        s = 0.0
        for i in range(na):
            s += x[i, h]
        eta_buf[h] = s
    _response_matrix(eta_buf, phi_const, phi_state, env_kind, alpha, kappa,
                     tie_tol, 0.0, nbr, pi_buf, phi_buf)
    fp = 0
    bit = 1
    for k in range(nh):
        for h in range(nh):
            if phi_buf[k, h] > 0.0:
                fp |= bit
            bit <<= 1
    return fp


@njit(cache=True)
def _record_phi_rows(x, phi, env_kind, alpha, kappa, tie_tol, beta, nbr,
                     pi_buf, phi_buf, eta_buf, rowsum_rec, idx):
    na, nh = x.shape
    for h in range(nh):
        s = 0.0
        for i in range(na):
            s += x[i, h]
        eta_buf[h] = s
    _response_matrix(eta_buf, phi, phi, env_kind, alpha, kappa, tie_tol, beta,
                     nbr, pi_buf, phi_buf)
    for h in range(nh):
        s = 0.0
        for k in range(nh):
            s += phi_buf[h, k]
        rowsum_rec[idx, h] = s


@njit(cache=True)
def rk4_fixed(x0, phi0, A, W, Lam, env_kind, alpha, kappa, tie_tol, beta, m,
              gamma, rho, phase, dt, n_steps, record_every, renorm_threshold,
              phi_hi, track_events, times, xs_rec, phis_rec, drift_rec,
              minent_rec, rowsum_rec, ev_time, ev_kind, x_last, phi_last):
    """Fixed-step RK4 over ``n_steps`` with per-step projection and recording.

    Returns (status, n_recorded, n_events, fail_step); status 1 means a
    non-finite state was produced at ``fail_step`` and ``x_last``/``phi_last``
    hold the last finite state.
    """
    na, nh = x0.shape
    dyn_phi = env_kind >= 2
    x = x0.copy()
    phi = phi0.copy()

    nbr = np.zeros((nh, nh), np.bool_)
    for a in range(nh):
        for b in range(nh):
            nbr[a, b] = Lam[a, b] > 0.0

    kx = np.empty((4, na, nh))
    kp = np.empty((4, nh, nh))
    xs = np.empty((na, nh))
    ps = np.empty((nh, nh))
    phi_buf = np.empty((nh, nh))
    pi_buf = np.empty(nh)
    y_buf = np.empty(na)
    eta_buf = np.empty(nh)
    r_buf = np.empty(na)
    G_buf = np.empty((na, nh))
    g_buf = np.empty(nh)
    ow_buf = np.empty(nh)
    stage_c = np.array([0.0, 0.5, 0.5, 1.0])

    # initial sample at t = 0
    n_rec = 0
    times[n_rec] = 0.0
    mass0 = 0.0
    mn0 = x[0, 0]
    for i in range(na):
        for h in range(nh):
            mass0 += x[i, h]
            if x[i, h] < mn0:
                mn0 = x[i, h]
    drift_rec[n_rec] = abs(mass0 - 1.0)
    minent_rec[n_rec] = mn0
    _record_phi_rows(x, phi, env_kind, alpha, kappa, tie_tol, beta, nbr,
                     pi_buf, phi_buf, eta_buf, rowsum_rec, n_rec)
    for i in range(na):
        for h in range(nh):
            xs_rec[n_rec, i, h] = x[i, h]
    if dyn_phi:
        for h in range(nh):
            for k in range(nh):
                phis_rec[n_rec, h, k] = phi[h, k]
    n_rec += 1

    prev_fp = 0
    if track_events:
        prev_fp = _argmax_fingerprint(x, phi, phi, env_kind, alpha, kappa,
                                      tie_tol, nbr, pi_buf, phi_buf, eta_buf)
    n_ev = 0
    status = 0
    fail_step = -1
    for i in range(na):
        for h in range(nh):
            x_last[i, h] = x[i, h]
    for h in range(nh):
        for k in range(nh):
            phi_last[h, k] = phi[h, k]

    for step in range(n_steps):
        t = step * dt
        for s in range(4):
            c = stage_c[s]
            if s == 0:
                for i in range(na):
                    for h in range(nh):
                        xs[i, h] = x[i, h]
                for h in range(nh):
                    for k in range(nh):
                        ps[h, k] = phi[h, k]
            else:
                for i in range(na):
                    for h in range(nh):
                        xs[i, h] = x[i, h] + dt * c * kx[s - 1, i, h]
                if dyn_phi:
                    for h in range(nh):
                        for k in range(nh):
                            ps[h, k] = phi[h, k] + dt * c * kp[s - 1, h, k]
            _field(xs, ps, t + c * dt, A, W, Lam, env_kind, alpha, kappa,
                   tie_tol, beta, m, gamma, rho, phase, nbr, phi_buf, pi_buf,
                   y_buf, eta_buf, r_buf, G_buf, g_buf, ow_buf, kx[s], kp[s])
        for i in range(na):
            for h in range(nh):
                x[i, h] += dt / 6.0 * (kx[0, i, h] + 2.0 * kx[1, i, h]
                                       + 2.0 * kx[2, i, h] + kx[3, i, h])
        if dyn_phi:
            for h in range(nh):
                for k in range(nh):
                    phi[h, k] += dt / 6.0 * (kp[0, h, k] + 2.0 * kp[1, h, k]
                                             + 2.0 * kp[2, h, k] + kp[3, h, k])
        t1 = (step + 1) * dt

        # projection: clamp stray negatives, then renormalize the mass
        mn = x[0, 0]
        for i in range(na):
            for h in range(nh):
                if x[i, h] < mn:
                    mn = x[i, h]
                if x[i, h] < 0.0:
                    x[i, h] = 0.0
        if dyn_phi:
            for h in range(nh):
                for k in range(nh):
                    if phi[h, k] < 0.0:
                        phi[h, k] = 0.0
                    elif phi[h, k] > phi_hi:
                        phi[h, k] = phi_hi
        mass = 0.0
        for i in range(na):
            for h in range(nh):
                mass += x[i, h]
        drift = abs(mass - 1.0)
        if drift > renorm_threshold:
            inv = 1.0 / mass
            for i in range(na):
                for h in range(nh):
                    x[i, h] *= inv
            ev_time[n_ev] = t1
            ev_kind[n_ev] = EV_RENORMALIZE
            n_ev += 1

        ok = True
        for i in range(na):
            for h in range(nh):
                if not np.isfinite(x[i, h]):
                    ok = False
        if dyn_phi:
            for h in range(nh):
                for k in range(nh):
                    if not np.isfinite(phi[h, k]):
                        ok = False
        if not ok:
            status = 1
            fail_step = step + 1
            break

        for i in range(na):
            for h in range(nh):
                x_last[i, h] = x[i, h]
        for h in range(nh):
            for k in range(nh):
                phi_last[h, k] = phi[h, k]

        if track_events:
            fp = _argmax_fingerprint(x, phi, phi, env_kind, alpha, kappa,
                                     tie_tol, nbr, pi_buf, phi_buf, eta_buf)
            if fp != prev_fp:
                ev_time[n_ev] = t1
                ev_kind[n_ev] = EV_ARGMAX_CHANGE
                n_ev += 1
                prev_fp = fp

        if (step + 1) % record_every == 0 or step + 1 == n_steps:
            times[n_rec] = t1
            drift_rec[n_rec] = drift
            minent_rec[n_rec] = mn
            _record_phi_rows(x, phi, env_kind, alpha, kappa, tie_tol, beta,
                             nbr, pi_buf, phi_buf, eta_buf, rowsum_rec, n_rec)
            for i in range(na):
                for h in range(nh):
                    xs_rec[n_rec, i, h] = x[i, h]
            if dyn_phi:
                for h in range(nh):
                    for k in range(nh):
                        phis_rec[n_rec, h, k] = phi[h, k]
            n_rec += 1

    return status, n_rec, n_ev, fail_step
