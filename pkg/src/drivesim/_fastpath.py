"""Compiled inner loop for the scene controller.

Importing this module requires numba; the controller falls back to the pure
numpy implementation when the import fails. Both implementations share the
same update semantics; only low-order float rounding may differ, which is
why log determinism is promised per build, not across builds.
"""

import math

import numpy as np
from numba import njit

# indices into the scalar parameter vector
P_DT = 0
P_LEADER_RANGE = 1
P_CORRIDOR = 2
P_LOOK_MIN = 3
P_LOOK_TIME = 4
P_SPACING_INV = 5
P_SPEED_CAP = 6
P_ESTOP_RANGE = 7
P_ESTOP_BRAKE = 8
P_IDM_A = 9
P_IDM_B = 10
P_DELTA_MAX = 11
P_ACCEL_MAX = 12
N_PARAMS = 13


@njit(cache=True, fastmath=False)
def step_kernel(x, y, phi, v, half_len, target, prog, s0, t_head, is_normal, is_estop,
                beta_ratio, two_wb, dt_over_lf, end_margin, route_len,
                wx, wy, wlimit, rows, ego_x, ego_y, ego_v, ego_hl, params,
                out_x, out_y, out_phi, out_v, out_prog,
                out_gap, out_lead_v, out_v0, out_ending):
    # route arrays stay full-size; rows[i] maps the i-th active agent to its
    # row (avoids copying the padded route matrix when some agents are idle)
    k = x.shape[0]
    last = wx.shape[1] - 1
    dt = params[P_DT]
    leader_range = params[P_LEADER_RANGE]
    corridor = params[P_CORRIDOR]
    brake_coef = 0.5 / math.sqrt(params[P_IDM_A] * params[P_IDM_B])
    for i in range(k):
        ci = math.cos(phi[i])
        si = math.sin(phi[i])
        best = np.inf
        lv = 0.0
        lhl = 0.0
        for j in range(k + 1):
            if j == i:
                continue
            if j < k:
                dx = x[j] - x[i]
                dy = y[j] - y[i]
                vj = v[j]
                hj = half_len[j]
            else:
                dx = ego_x - x[i]
                dy = ego_y - y[i]
                vj = ego_v
                hj = ego_hl
            fwd = ci * dx + si * dy
            if fwd <= 0.05 or fwd >= leader_range or fwd >= best:
                continue
            lat = ci * dy - si * dx
            if lat < 0.0:
                lat = -lat
            if lat >= corridor:
                continue
            best = fwd
            lv = vj
            lhl = hj

        gap = best - lhl - half_len[i]
        if gap < 0.05:
            gap = 0.05
        end_gap = route_len[i] - prog[i] + end_margin[i]
        if end_gap < 0.05:
            end_gap = 0.05
        ending = end_gap < gap
        if ending:
            gap = end_gap
            lv = 0.0
        out_gap[i] = gap
        out_lead_v[i] = lv
        out_ending[i] = ending

        wp = int(prog[i] * params[P_SPACING_INV])
        if wp > last:
            wp = last
        limit = wlimit[rows[i], wp]
        v0 = target[i]
        if is_normal[i] and limit < v0:
            v0 = limit
        out_v0[i] = v0

        # intelligent driver model
        v0_f = v0 if v0 > 1e-3 else 1e-3
        ratio = v[i] / v0_f
        ratio2 = ratio * ratio
        term = 1.0 - ratio2 * ratio2
        hw = v[i] * (t_head[i] + (v[i] - lv) * brake_coef)
        if hw < 0.0:
            hw = 0.0
        s_star = s0[i] + hw
        g = gap if gap > 0.1 else 0.1
        inter = s_star / g
        a = params[P_IDM_A] * (term - inter * inter)
        if a > params[P_ACCEL_MAX]:
            a = params[P_ACCEL_MAX]
        if a < -params[P_ACCEL_MAX]:
            a = -params[P_ACCEL_MAX]
        if v0 <= 0.01 and a > 0.0:
            a = 0.0
        if is_estop[i]:
            dxe = ego_x - x[i]
            dye = ego_y - y[i]
            fwd_e = ci * dxe + si * dye
            lat_e = ci * dye - si * dxe
            if lat_e < 0.0:
                lat_e = -lat_e
            if fwd_e > 0.0 and fwd_e <= params[P_ESTOP_RANGE] and lat_e < corridor:
                a = params[P_ESTOP_BRAKE]

        # pure pursuit toward the lookahead waypoint
        look = params[P_LOOK_TIME] * v[i]
        if look < params[P_LOOK_MIN]:
            look = params[P_LOOK_MIN]
        ti = int((prog[i] + look) * params[P_SPACING_INV])
        if ti > last:
            ti = last
        tx = wx[rows[i], ti] - x[i]
        ty = wy[rows[i], ti] - y[i]
        lat_t = ci * ty - si * tx
        d2 = tx * tx + ty * ty
        if d2 < 1e-9:
            d2 = 1e-9
        delta = math.atan2(two_wb[i] * lat_t, d2)
        if delta > params[P_DELTA_MAX]:
            delta = params[P_DELTA_MAX]
        if delta < -params[P_DELTA_MAX]:
            delta = -params[P_DELTA_MAX]

        # bicycle-model advance
        beta = math.atan(beta_ratio[i] * math.tan(delta))
        v_next = v[i] + a * dt
        cap = params[P_SPEED_CAP] * limit
        if v_next < 0.0:
            v_next = 0.0
        if v_next > cap:
            v_next = cap
        heading = phi[i] + math.sin(beta) * v[i] * dt_over_lf[i]
        r = (heading + math.pi) % (2.0 * math.pi)
        if r == 0.0:
            r = 2.0 * math.pi
        move = v[i] * dt
        ang = phi[i] + beta
        out_x[i] = x[i] + move * math.cos(ang)
        out_y[i] = y[i] + move * math.sin(ang)
        out_phi[i] = r - math.pi
        out_v[i] = v_next
        p_next = prog[i] + move
        if p_next > route_len[i]:
            p_next = route_len[i]
        out_prog[i] = p_next
