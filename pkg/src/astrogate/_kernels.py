"""Hot inner loops: simulator stepping and per-sample gated training.

Each kernel exists twice: a loop-style numba ``@njit`` version and a
vectorized pure-numpy twin. Callers dispatch on the active backend. Both
versions draw from the same pre-generated random arrays, so for a fixed seed
they differ only by floating-point summation order (tested to agree tightly).

Argument conventions shared by the sim kernels:
  c, e, ip3       - per-cell state, updated in place
  labels          - per-edge junction codes (JSTATE_*), updated in place
  ei, ej          - edge endpoint indices, i < j
  normals         - (k, n_cells) noise, already scaled by noise_sigma
  uniforms        - (k, 2*n_edges) junction draws, i-side hemichannel first
  inj_on/ip3_boost- per-step drive / rising-edge indicators
  base_step       - global index of the first step in this chunk
  stride          - record rows where (global step) % stride == 0; stride 0
                    disables recording
Returns the 1-based global step index that produced a non-finite value, or
-1 when the chunk completed cleanly.
"""

import numpy as np

from .backend import jit


def _sim_chunk(c, e, ip3, labels, ei, ej, normals, uniforms, inj_on, ip3_boost,
               dt, sqrt_dt, v_ip3, k1, hn, k_i, hm, v_serca, k2, hp,
               kappa_o, kappa_f, v_plc, k_p, kappa_d, kappa_diff,
               g_max, rho, a0, a1, a2,
               tx_cell, inj_amount, conc, use_sampled, base_step, stride,
               out_c, out_e, out_ip3):
    n = c.shape[0]
    n_edges = ei.shape[0]
    n_steps = normals.shape[0]
    diff = np.empty(n)
    cn = np.empty(n)
    en = np.empty(n)
    pn = np.empty(n)
    for s in range(n_steps):
        for i in range(n):
            diff[i] = 0.0
        for t in range(n_edges):
            i = ei[t]
            j = ej[t]
            gap = c[i] - c[j]
            u = a0 + a1 * abs(gap) + a2 * (c[i] + c[j])
            if u >= 0.0:
                p = 1.0 / (1.0 + np.exp(-u))
            else:
                ex = np.exp(u)
                p = ex / (1.0 + ex)
            lab = 0
            if uniforms[s, 2 * t] < p:
                lab += 2
            if uniforms[s, 2 * t + 1] < p:
                lab += 1
            labels[t] = lab
            if use_sampled == 1:
                if lab == 3:
                    g = g_max
                elif lab == 0:
                    g = 0.0
                else:
                    g = rho * g_max
            else:
                g = g_max * (p * p + 2.0 * rho * p * (1.0 - p))
            flow = g * gap
            diff[i] += flow
            diff[j] -= flow
        for i in range(n):
            ci = c[i]
            cpn = ci ** hn
            ipm = ip3[i] ** hm
            j_in = v_ip3 * (cpn / (k1 ** hn + cpn)) * (ipm / (k_i ** hm + ipm)) \
                * (e[i] - ci)
            cpp = ci ** hp
            j_out = v_serca * (cpp / (k2 ** hp + cpp)) + kappa_o * ci
            cn[i] = ci + dt * (j_in - j_out - kappa_diff * diff[i]) \
                + sqrt_dt * normals[s, i]
            en[i] = e[i] + dt * (j_out - j_in - kappa_f * (e[i] - ci))
            pn[i] = ip3[i] + dt * (v_plc * ci * ci / (k_p * k_p + ci * ci)
                                   - kappa_d * ip3[i])
        if inj_on[s] == 1:
            cn[tx_cell] += inj_amount
        if ip3_boost[s] == 1:
            pn[tx_cell] += conc
        bad = False
        for i in range(n):
            if cn[i] < 0.0:
                cn[i] = 0.0
            if en[i] < 0.0:
                en[i] = 0.0
            if pn[i] < 0.0:
                pn[i] = 0.0
            if not (np.isfinite(cn[i]) and np.isfinite(en[i])
                    and np.isfinite(pn[i])):
                bad = True
            c[i] = cn[i]
            e[i] = en[i]
            ip3[i] = pn[i]
        k = base_step + s + 1
        if bad:
            return k
        if stride > 0 and k % stride == 0:
            r = k // stride
            for i in range(n):
                out_c[r, i] = c[i]
                out_e[r, i] = e[i]
                out_ip3[r, i] = ip3[i]
    return -1


sim_chunk_numba = jit(_sim_chunk)


def _sigmoid_vec(u):
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    ex = np.exp(u[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sim_chunk_numpy(c, e, ip3, labels, ei, ej, normals, uniforms, inj_on,
                    ip3_boost, dt, sqrt_dt, v_ip3, k1, hn, k_i, hm, v_serca,
                    k2, hp, kappa_o, kappa_f, v_plc, k_p, kappa_d, kappa_diff,
                    g_max, rho, a0, a1, a2,
                    tx_cell, inj_amount, conc, use_sampled, base_step, stride,
                    out_c, out_e, out_ip3):
    n = c.shape[0]
    n_steps = normals.shape[0]
    # overflow on the way to divergence is expected; the finite check below
    # is the error path
    np_err = np.seterr(over="ignore", invalid="ignore")
    for s in range(n_steps):
        gap = c[ei] - c[ej]
        u = a0 + a1 * np.abs(gap) + a2 * (c[ei] + c[ej])
        p = _sigmoid_vec(u)
        left = uniforms[s, 0::2] < p
        right = uniforms[s, 1::2] < p
        labels[:] = (2 * left + right).astype(np.int8)
        if use_sampled == 1:
            g = np.where(labels == 3, g_max,
                         np.where(labels == 0, 0.0, rho * g_max))
        else:
            g = g_max * (p * p + 2.0 * rho * p * (1.0 - p))
        flow = g * gap
        diff = np.bincount(ei, weights=flow, minlength=n) \
            - np.bincount(ej, weights=flow, minlength=n)
        cpn = c ** hn
        ipm = ip3 ** hm
        j_in = v_ip3 * (cpn / (k1 ** hn + cpn)) * (ipm / (k_i ** hm + ipm)) \
            * (e - c)
        cpp = c ** hp
        j_out = v_serca * (cpp / (k2 ** hp + cpp)) + kappa_o * c
        cn = c + dt * (j_in - j_out - kappa_diff * diff) + sqrt_dt * normals[s]
        en = e + dt * (j_out - j_in - kappa_f * (e - c))
        pn = ip3 + dt * (v_plc * c * c / (k_p * k_p + c * c) - kappa_d * ip3)
        if inj_on[s] == 1:
            cn[tx_cell] += inj_amount
        if ip3_boost[s] == 1:
            pn[tx_cell] += conc
        np.maximum(cn, 0.0, out=cn)
        np.maximum(en, 0.0, out=en)
        np.maximum(pn, 0.0, out=pn)
        c[:] = cn
        e[:] = en
        ip3[:] = pn
        k = base_step + s + 1
        if not (np.isfinite(cn).all() and np.isfinite(en).all()
                and np.isfinite(pn).all()):
            np.seterr(**np_err)
            return k
        if stride > 0 and k % stride == 0:
            r = k // stride
            out_c[r] = c
            out_e[r] = e
            out_ip3[r] = ip3
    np.seterr(**np_err)
    return -1


# --- training -------------------------------------------------------------
#
# The model is packed into flat float64 buffers so one kernel signature covers
# any layer layout:
#   widths      - (L+1,) layer widths, widths[0] = input dim, widths[L] = 1
#   w_flat/w_off- concatenated row-major weight matrices and their offsets
#   u_off       - unit offsets per layer (prefix sums of widths[1:])
#   h_off       - activation offsets including the input layer
#   lap_flat/lap_off - per-layer synapse-graph Laplacians (n_l x n_l)
# theta_w is the per-weight threshold buffer used only by synapse-granular
# gating; unit-granular gating uses theta (per unit). Biases always gate at
# unit granularity and carry momentum but no decay or Laplacian coupling.
#
# Flags: gated (0/1), granularity (0 unit / 1 synapse), simplified_delta
# (0: output delta keeps the extra sigmoid-derivative factor as specified;
# 1: analytically simplified yhat - y), act (0 logistic, 1 tanh, 2 relu),
# sample_aligned (0: gate signal row = global step % n_rows, 1: row = sample
# index % n_rows). Returns the summed training loss over the epoch.


def _train_epoch(widths, w_flat, w_off, b_flat, theta, theta_w, mom_w, mom_b,
                 lap_flat, lap_off, u_off, h_off, X, y, order, chat,
                 eta, lambda_m, lambda_w, xi, mu,
                 alpha, beta, gamma, delta, eps_ca, k_steep, eta_theta,
                 gated, granularity, simplified_delta, act, sample_aligned,
                 start_t, h_buf, z_buf, d_buf, m_buf, gm_buf, lw_buf):
    n_layers = widths.shape[0] - 1
    n_samples = order.shape[0]
    n_rows = chat.shape[0]
    loss_sum = 0.0
    for s in range(n_samples):
        idx = order[s]
        # forward
        for q in range(widths[0]):
            h_buf[h_off[0] + q] = X[idx, q]
        for l in range(n_layers):
            nin = widths[l]
            nout = widths[l + 1]
            wo = w_off[l]
            for i in range(nout):
                acc = b_flat[u_off[l] + i]
                row = wo + i * nin
                for q in range(nin):
                    acc += w_flat[row + q] * h_buf[h_off[l] + q]
                z_buf[u_off[l] + i] = acc
                if l == n_layers - 1 or act == 0:
                    if acc >= 0.0:
                        hv = 1.0 / (1.0 + np.exp(-acc))
                    else:
                        exa = np.exp(acc)
                        hv = exa / (1.0 + exa)
                elif act == 1:
                    hv = np.tanh(acc)
                else:
                    hv = acc if acc > 0.0 else 0.0
                h_buf[h_off[l + 1] + i] = hv
        yhat = h_buf[h_off[n_layers]]
        yc = yhat
        if yc < 1e-12:
            yc = 1e-12
        elif yc > 1.0 - 1e-12:
            yc = 1.0 - 1e-12
        ys = y[idx]
        loss_sum += -(ys * np.log(yc) + (1.0 - ys) * np.log(1.0 - yc))

        # gates (thresholds adapt only in gated mode)
        if gated == 1:
            if sample_aligned == 1:
                row_idx = idx % n_rows
            else:
                row_idx = (start_t + s) % n_rows
            for l in range(n_layers):
                nin = widths[l]
                nout = widths[l + 1]
                xbar = 0.0
                for q in range(nin):
                    xbar += h_buf[h_off[l] + q]
                xbar /= nin
                zsup = 2.0 * ys - 1.0 if l == n_layers - 1 else 0.0
                for i in range(nout):
                    ui = u_off[l] + i
                    chat_i = chat[row_idx, ui]
                    if granularity == 0:
                        drive = alpha * xbar + beta * z_buf[ui] + gamma * yhat \
                            + delta * zsup + eps_ca * chat_i
                        arg = k_steep * (drive - theta[ui])
                        if arg >= 0.0:
                            sg = 1.0 / (1.0 + np.exp(-arg))
                        else:
                            exa = np.exp(arg)
                            sg = exa / (1.0 + exa)
                        m_buf[ui] = 2.0 * sg - 1.0
                        theta[ui] = (1.0 - eta_theta) * theta[ui] \
                            + eta_theta * drive
                        gm_buf[ui] = 1.0 + lambda_m * m_buf[ui]
                    else:
                        row = w_off[l] + i * nin
                        for q in range(nin):
                            drive = alpha * h_buf[h_off[l] + q] \
                                + beta * z_buf[ui] + gamma * yhat \
                                + delta * zsup + eps_ca * chat_i
                            arg = k_steep * (drive - theta_w[row + q])
                            if arg >= 0.0:
                                sg = 1.0 / (1.0 + np.exp(-arg))
                            else:
                                exa = np.exp(arg)
                                sg = exa / (1.0 + exa)
                            m_buf[row + q] = 2.0 * sg - 1.0
                            theta_w[row + q] = (1.0 - eta_theta) \
                                * theta_w[row + q] + eta_theta * drive
                        gm_buf[ui] = 1.0

        # backprop deltas
        if simplified_delta == 1:
            d_buf[u_off[n_layers - 1]] = yhat - ys
        else:
            d_buf[u_off[n_layers - 1]] = (yhat - ys) * yhat * (1.0 - yhat)
        for l in range(n_layers - 2, -1, -1):
            nout = widths[l + 1]
            nnext = widths[l + 2]
            wo = w_off[l + 1]
            for i in range(nout):
                acc = 0.0
                for knx in range(nnext):
                    acc += w_flat[wo + knx * nout + i] * d_buf[u_off[l + 1] + knx]
                hv = h_buf[h_off[l + 1] + i]
                if act == 0:
                    dphi = hv * (1.0 - hv)
                elif act == 1:
                    dphi = 1.0 - hv * hv
                else:
                    dphi = 1.0 if z_buf[u_off[l] + i] > 0.0 else 0.0
                d_buf[u_off[l] + i] = dphi * acc

        # apply updates layer by layer; the Laplacian coupling reads the
        # layer's pre-update weights, staged into lw_buf first
        for l in range(n_layers):
            nin = widths[l]
            nout = widths[l + 1]
            wo = w_off[l]
            lo = lap_off[l]
            if xi != 0.0:
                for i in range(nout):
                    row = wo + i * nin
                    for q in range(nin):
                        acc = 0.0
                        for uu in range(nout):
                            acc += lap_flat[lo + i * nout + uu] \
                                * w_flat[wo + uu * nin + q]
                        lw_buf[row + q] = acc
            for i in range(nout):
                ui = u_off[l] + i
                if gated == 1:
                    if granularity == 0:
                        gm = gm_buf[ui]
                    else:
                        gm = 1.0
                else:
                    gm = 1.0
                base = -eta * gm * d_buf[ui]
                row = wo + i * nin
                for q in range(nin):
                    if granularity == 1 and gated == 1:
                        gw = 1.0 + lambda_m * m_buf[row + q]
                        dw = -eta * gw * d_buf[ui] * h_buf[h_off[l] + q]
                    else:
                        dw = base * h_buf[h_off[l] + q]
                    dw -= lambda_w * w_flat[row + q]
                    if xi != 0.0:
                        dw -= xi * lw_buf[row + q]
                    dw += mu * mom_w[row + q]
                    w_flat[row + q] += dw
                    mom_w[row + q] = dw
                db = base + mu * mom_b[ui]
                b_flat[ui] += db
                mom_b[ui] = db
    return loss_sum


train_epoch_numba = jit(_train_epoch)
# Interpreted fallback for the loop kernel is far too slow; the numpy path
# lives in learner.py as per-sample vector ops over the same packed buffers.
