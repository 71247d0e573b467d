"""Vectorized multi-epoch simulation kernel.

Epochs are independent observation windows (fresh users, shadowing, and
configuration assignment per epoch), so a whole run is batched into flat
(epoch x user) arrays and stepped once.  All state updates are order-fixed,
which makes a run a pure function of (layout, config, assignment, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import radio
from .errors import ValidationError
from .scenario import (
    CONFIG_CLASSES,
    LOCATION_TYPES,
    MobilityClass,
    NetworkLayout,
    ScenarioConfig,
    Tier,
    class_parameters,
)
from .sim import (
    APP_CATEGORIES,
    BYTE_MEDIANS,
    DT_MS,
    DT_S,
    TRAFFIC_MIX,
    HandoverEvent,
    HandoverOutcome,
    PositionSample,
    SessionEvent,
    UserEquipment,
    draw_user_arrays,
)

_TAG_MOBILITY = 41
_TAG_TRAFFIC = 43
_TAG_SESSION = 47

_LOC_INDEX = {t: i for i, t in enumerate(LOCATION_TYPES)}


@dataclass
class RunResult:
    cell_ids: list[int]
    features: np.ndarray          # (n_cells, n_epochs, 13)
    labels: np.ndarray            # (n_cells, n_epochs) class indices
    user_ho_counts: np.ndarray    # (n_epochs, n_users)
    user_bytes: np.ndarray
    user_distance: np.ndarray
    user_rog: np.ndarray
    cat_loc_counts: np.ndarray    # (13, 4)
    handover_events: Optional[list[HandoverEvent]] = None
    session_events: Optional[list[SessionEvent]] = None
    position_samples: Optional[list[PositionSample]] = None


def simulate_run(
    layout: NetworkLayout,
    config: ScenarioConfig,
    assignment: Optional[np.ndarray] = None,
    seed: Optional[int] = None,
    *,
    users: Optional[list[UserEquipment]] = None,
    epoch_ids: Optional[Sequence[int]] = None,
    collect_events: bool = False,
    position_sample_every: int = 10,
) -> RunResult:
    """Simulate ``len(epoch_ids)`` epochs and return per-cell KPI features.

    ``assignment`` is an (n_femtos, n_epochs) array of configuration-class
    indices (femtos in layout order); by default every epoch uses the classes
    already present in the layout.  Event collection requires a single epoch.
    """
    if seed is None:
        seed = config.rng_seed
    if epoch_ids is None:
        epoch_ids = list(range(config.epochs_per_run))
    epoch_ids = [int(e) for e in epoch_ids]
    n_epochs = len(epoch_ids)
    if collect_events and n_epochs != 1:
        raise ValidationError("event collection is only supported for single-epoch runs")

    cells = layout.cells
    n_cells = len(cells)
    cell_ids = [c.id for c in cells]
    macro_i = next(i for i, c in enumerate(cells) if c.tier is Tier.MACRO)
    femto_idx = np.array([i for i, c in enumerate(cells) if c.tier is Tier.FEMTO], dtype=int)
    n_femtos = femto_idx.size

    if assignment is None:
        base = np.array([CONFIG_CLASSES.index(cells[i].config_class) for i in femto_idx], dtype=int)
        assignment = np.repeat(base[:, None], n_epochs, axis=1)
    assignment = np.asarray(assignment, dtype=int)
    if assignment.shape != (n_femtos, n_epochs):
        raise ValidationError(
            f"assignment shape {assignment.shape} does not match ({n_femtos}, {n_epochs})"
        )

    # --- per (cell, epoch) parameters -------------------------------------
    rp = config.radio
    tx = np.empty((n_cells, n_epochs))
    margin = np.empty((n_cells, n_epochs))
    ttt = np.full((n_cells, n_epochs), config.ttt_nominal)
    labels = np.zeros((n_cells, n_epochs), dtype=int)
    tx[macro_i, :] = config.macro_tx_power
    margin[macro_i, :] = config.handover_margin_nominal
    class_tx = np.array([class_parameters(config, c)[0] for c in CONFIG_CLASSES])
    class_margin = np.array([class_parameters(config, c)[1] for c in CONFIG_CLASSES])
    for j, i in enumerate(femto_idx):
        tx[i, :] = class_tx[assignment[j]]
        margin[i, :] = class_margin[assignment[j]]
        labels[i, :] = assignment[j]

    cx = np.array([c.position[0] for c in cells])
    cy = np.array([c.position[1] for c in cells])
    indoor = np.array([c.indoor for c in cells], dtype=bool)
    is_femto = np.array([c.tier is Tier.FEMTO for c in cells], dtype=bool)
    loc_idx = np.array([_LOC_INDEX[c.location_type] for c in cells], dtype=int)
    sigma = np.where(indoor, rp.shadowing_sigma_indoor_db, rp.shadowing_sigma_outdoor_db)
    wall_add = np.where(indoor & is_femto, rp.wall_loss_db, 0.0)
    br2 = rp.building_radius_m**2

    c_int, c_slope = radio.cost231_coefficients(rp.freq_mhz, rp.macro_height_m, rp.ue_height_m)
    itu_off = radio.itu_indoor_offset(rp.freq_mhz, floors=0)
    noise_mw = 10.0 ** (rp.noise_floor_dbm / 10.0)

    # --- users -------------------------------------------------------------
    n_users = len(users) if users is not None else config.user_count
    n_rows = n_epochs * n_users
    epoch_row = np.repeat(np.arange(n_epochs), n_users)
    rows = np.arange(n_rows)

    if users is not None:
        pos = np.array([u.position for u in users], dtype=float).reshape(n_rows, 2)
        wp = np.array([u.waypoint for u in users], dtype=float).reshape(n_rows, 2)
        home = np.array([u.home for u in users], dtype=float).reshape(n_rows, 2)
        speed = np.array([u.speed for u in users], dtype=float)
        classes = np.array(
            [list(MobilityClass).index(u.mobility_class) for u in users], dtype=int
        )
    else:
        parts = [draw_user_arrays(layout, config, seed, e) for e in epoch_ids]
        pos = np.concatenate([p["position"] for p in parts])
        wp = np.concatenate([p["waypoint"] for p in parts])
        home = np.concatenate([p["home"] for p in parts])
        speed = np.concatenate([p["speed"] for p in parts])
        classes = np.concatenate([p["classes"] for p in parts])
    is_ped = classes == 1
    is_veh = classes == 2
    moving = speed > 0.0
    step_len = speed * DT_S

    shadow = np.empty((n_rows, n_cells))
    for e in range(n_epochs):
        shadow[e * n_users : (e + 1) * n_users] = radio.shadowing_matrix(
            seed, epoch_ids[e], n_users, sigma
        )
    txs = np.repeat(tx.T, n_users, axis=0) + shadow  # (rows, cells) tx + shadowing

    # --- traffic pre-draw (exact Poisson arrival times) ---------------------
    n_steps = int(round(config.epoch_duration * 1000.0 / DT_MS))
    tp = config.traffic
    lam = np.full(n_rows, tp.session_rate_per_s * config.epoch_duration)
    lam[is_veh] *= tp.vehicle_rate_multiplier
    rng_tr = np.random.default_rng(np.random.SeedSequence([seed, _TAG_TRAFFIC]))
    sess_count = rng_tr.poisson(lam) if n_rows else np.zeros(0, dtype=int)
    s_rows = np.repeat(rows, sess_count)
    s_steps = rng_tr.integers(0, n_steps, s_rows.size)
    order = np.lexsort((s_rows, s_steps))
    s_rows = s_rows[order]
    s_steps = s_steps[order]
    step_ptr = np.searchsorted(s_steps, np.arange(n_steps + 1))
    n_sess_total = s_rows.size
    s_cell = np.full(n_sess_total, -1, dtype=int)
    s_comp = np.zeros(n_sess_total, dtype=int)
    s_cat = np.zeros(n_sess_total, dtype=int)
    s_bytes = np.zeros(n_sess_total)
    s_active = np.zeros(n_sess_total, dtype=bool)
    ends_by_step: list[list[int]] = [[] for _ in range(n_steps)]
    mix_cdf = np.cumsum(
        np.stack([TRAFFIC_MIX[t] / TRAFFIC_MIX[t].sum() for t in LOCATION_TYPES]), axis=1
    )
    loc_byte_scale = np.array([tp.location_byte_scale[t] for t in LOCATION_TYPES])

    rng_mob = np.random.default_rng(np.random.SeedSequence([seed, _TAG_MOBILITY]))
    rng_sess = np.random.default_rng(np.random.SeedSequence([seed, _TAG_SESSION]))

    # --- state -------------------------------------------------------------
    ce = n_cells * n_epochs
    serving = np.zeros(n_rows, dtype=int)
    ttt_t = np.zeros(n_rows)
    rlf_t = np.zeros(n_rows)
    last_ho_ms = np.full(n_rows, -np.inf)
    recent_src = np.full(n_rows, -1, dtype=int)
    recent_ms = np.full(n_rows, -np.inf)
    user_active = np.zeros(n_rows, dtype=int)
    conc_flat = np.zeros(ce, dtype=int)

    adm_flat = np.zeros(ce)
    blk_flat = np.zeros(ce)
    drop_flat = np.zeros(ce)
    bytes_flat = np.zeros(ce)
    att_flat = np.zeros(ce)
    late_flat = np.zeros(ce)
    early_flat = np.zeros(ce)
    wrong_flat = np.zeros(ce)
    nsamp_flat = np.zeros(ce)
    rssi_flat = np.zeros(ce)
    sinr_flat = np.zeros(ce)
    bad_flat = np.zeros(ce)
    attached_any = np.zeros((n_rows, n_cells), dtype=bool)
    ho_user = np.zeros(n_rows)
    bytes_user = np.zeros(n_rows)
    dist_user = np.zeros(n_rows)
    pos_sum = np.zeros((n_rows, 2))
    pos_sq = np.zeros(n_rows)
    cat_loc = np.zeros((len(APP_CATEGORIES), len(LOCATION_TYPES)))

    ho_events: list[list] = []
    session_events: list[SessionEvent] = []
    position_samples: list[PositionSample] = []
    last_event_idx = np.full(n_rows, -1, dtype=int)

    # preallocated (rows, cells) work buffers
    b_d2 = np.empty((n_rows, n_cells))
    b_log = np.empty((n_rows, n_cells))
    b_pl = np.empty((n_rows, n_cells))
    b_rx = np.empty((n_rows, n_cells))
    b_lin = np.empty((n_rows, n_cells))
    b_msk = np.empty((n_rows, n_cells))
    b_bool = np.empty((n_rows, n_cells), dtype=bool)

    region = config.region_size
    settle_ms = config.rlf.settle_ms
    qout = config.rlf.qout_db
    t_rlf_ms = config.rlf.t_rlf_ms
    t_store_ms = config.rlf.t_store_ms
    bler_thr = config.rlf.bler_sinr_threshold_db
    limit = tp.admission_limit
    mean_steps = tp.mean_session_s / DT_S

    def link_budget():
        """Fill b_rx / b_lin for current positions; returns (rssi, sinr) per row."""
        np.subtract(pos[:, 0, None], cx[None, :], out=b_d2)
        np.square(b_d2, out=b_d2)
        np.subtract(pos[:, 1, None], cy[None, :], out=b_log)
        np.square(b_log, out=b_log)
        np.add(b_d2, b_log, out=b_d2)
        np.maximum(b_d2, 1.0, out=b_d2)
        np.log10(b_d2, out=b_log)
        np.multiply(b_log, 0.5, out=b_log)
        # femto form everywhere, then overwrite the macro column
        np.multiply(b_log, 30.0, out=b_pl)
        np.add(b_pl, itu_off, out=b_pl)
        np.greater(b_d2, br2, out=b_bool)
        np.multiply(b_bool, wall_add[None, :], out=b_msk)
        np.add(b_pl, b_msk, out=b_pl)
        b_pl[:, macro_i] = c_int + c_slope * (b_log[:, macro_i] - 3.0)
        np.subtract(txs, b_pl, out=b_rx)
        np.multiply(b_rx, radio.LN10_OVER_10, out=b_lin)
        np.exp(b_lin, out=b_lin)
        tot = b_lin.sum(axis=1)
        s_lin = b_lin[rows, serving]
        interf = np.maximum(tot - s_lin, 0.0) + noise_mw
        sinr_db = 10.0 * np.log10(s_lin / interf)
        rssi_db = b_rx[rows, serving]
        return rssi_db, sinr_db, tot

    # initial attachment: strongest received power at epoch start
    tot_lin = np.zeros(n_rows)
    if n_rows:
        link_budget()
        serving[:] = np.argmax(b_rx, axis=1)

    for t in range(n_steps):
        time_ms = t * DT_MS
        time_s = time_ms / 1000.0

        # (1) mobility
        if n_rows:
            delta = wp - pos
            dist = np.hypot(delta[:, 0], delta[:, 1])
            arrive = moving & (dist <= step_len)
            go = moving & ~arrive
            frac = step_len / np.where(dist > 0.0, dist, 1.0)
            pos[go] += delta[go] * frac[go, None]
            pos[arrive] = wp[arrive]
            dist_user += np.where(arrive, dist, step_len) * moving
            aped = arrive & is_ped
            aveh = arrive & is_veh
            if aped.any():
                wp[aped] = _new_ped_waypoints(rng_mob, home[aped], config.mobility.home_range_m, region)
            if aveh.any():
                wp[aveh] = rng_mob.uniform([0.0, 0.0], list(region), (int(aveh.sum()), 2))

        # (2) link budgets
        if n_rows:
            rssi_db, sinr_db, tot_lin = link_budget()
            comp = serving * n_epochs + epoch_row
            nsamp_flat += np.bincount(comp, minlength=ce)
            rssi_flat += np.bincount(comp, weights=rssi_db, minlength=ce)
            sinr_flat += np.bincount(comp, weights=sinr_db, minlength=ce)
            bad = sinr_db < bler_thr
            bad_flat += np.bincount(comp, weights=bad.astype(float), minlength=ce)
            attached_any[rows, serving] = True

        # (3) handover evaluation
        if n_rows and n_cells > 1:
            np.copyto(b_msk, b_rx)
            b_msk[rows, serving] = -np.inf
            best = np.argmax(b_msk, axis=1)
            best_rx = b_msk[rows, best]
            cond = (best_rx > rssi_db + margin[serving, epoch_row]) & (
                time_ms - last_ho_ms >= settle_ms
            )
            ttt_t = np.where(cond, ttt_t + DT_MS, 0.0)
            trig = np.nonzero(ttt_t >= ttt[serving, epoch_row])[0]
            rlf_bad = sinr_db < qout
            if trig.size:
                src = serving[trig]
                tgt = best[trig]
                e_t = epoch_row[trig]
                tgt_comp = tgt * n_epochs + e_t
                blocked = (user_active[trig] > 0) & is_femto[tgt] & (conc_flat[tgt_comp] >= limit)
                np.add.at(att_flat, src * n_epochs + e_t, 1.0)
                # execution quality: a handover whose target is already below
                # the outage threshold fails and the user falls back to the
                # source, the classic too-early triggering failure
                s_t = b_lin[trig, tgt]
                sinr_t = 10.0 * np.log10(
                    s_t / (np.maximum(tot_lin[trig] - s_t, 0.0) + noise_mw)
                )
                failed = ~blocked & (sinr_t < qout)
                exe = trig[~blocked & ~failed]
                idx_f = trig[failed]
                if idx_f.size:
                    np.add.at(early_flat, src[failed] * n_epochs + e_t[failed], 1.0)
                    last_ho_ms[idx_f] = time_ms
                    rlf_t[idx_f] = 0.0
                    rlf_bad[idx_f] = False
                if collect_events:
                    for k, row in enumerate(trig):
                        if blocked[k]:
                            out = "blocked"
                        elif failed[k]:
                            out = "rlf_too_early"
                        else:
                            out = "success"
                        ho_events.append([int(row % n_users), time_s, cell_ids[src[k]], cell_ids[tgt[k]], out])
                        if out == "success":
                            last_event_idx[row] = len(ho_events) - 1
                if exe.size:
                    recent_src[exe] = serving[exe]
                    serving[exe] = best[exe]
                    recent_ms[exe] = time_ms
                    last_ho_ms[exe] = time_ms
                    rlf_t[exe] = 0.0
                    ho_user[exe] += 1.0
                    rlf_bad[exe] = False
                ttt_t[trig] = 0.0

            # (4) radio link failure detection and classification
            rlf_t = np.where(rlf_bad, rlf_t + DT_MS, 0.0)
            fired = np.nonzero(rlf_t >= t_rlf_ms)[0]
            if fired.size:
                recon = np.argmax(b_rx[fired], axis=1)
                srv_f = serving[fired]
                e_f = epoch_row[fired]
                recent = (recent_src[fired] >= 0) & (time_ms - recent_ms[fired] <= t_store_ms)
                early = recent & (recon == recent_src[fired])
                wrong = recent & ~early & (recon != srv_f)
                # reestablishment on the failed cell itself is a coverage outage,
                # not a mobility failure; it feeds dcr/bler but no failure event
                late = ~early & ~wrong & (recon != srv_f)
                idx_e = fired[early]
                idx_w = fired[wrong]
                idx_l = fired[late]
                if idx_e.size:
                    np.add.at(early_flat, recent_src[idx_e] * n_epochs + epoch_row[idx_e], 1.0)
                if idx_w.size:
                    np.add.at(wrong_flat, recent_src[idx_w] * n_epochs + epoch_row[idx_w], 1.0)
                if idx_l.size:
                    comp_l = serving[idx_l] * n_epochs + epoch_row[idx_l]
                    np.add.at(late_flat, comp_l, 1.0)
                    np.add.at(att_flat, comp_l, 1.0)
                if collect_events:
                    recon_of = dict(zip(fired.tolist(), recon.tolist()))
                    for row in idx_l:
                        ho_events.append([
                            int(row % n_users), time_s, cell_ids[serving[row]],
                            cell_ids[recon_of[int(row)]], "rlf_too_late",
                        ])
                    for row in idx_e:
                        if last_event_idx[row] >= 0:
                            ho_events[last_event_idx[row]][4] = "rlf_too_early"
                    for row in idx_w:
                        if last_event_idx[row] >= 0:
                            ho_events[last_event_idx[row]][4] = "rlf_wrong_cell"
                # drop every active session of the failed users
                if n_sess_total:
                    victims = np.nonzero(s_active & np.isin(s_rows, fired))[0]
                    if victims.size:
                        np.add.at(drop_flat, s_comp[victims], 1.0)
                        np.add.at(conc_flat, s_comp[victims], -1)
                        s_active[victims] = False
                        if collect_events:
                            for v in victims:
                                session_events.append(SessionEvent(
                                    int(s_rows[v] % n_users), time_s, cell_ids[s_cell[v]],
                                    APP_CATEGORIES[s_cat[v]], float(s_bytes[v]), "dropped",
                                ))
                user_active[fired] = 0
                serving[fired] = recon
                ttt_t[fired] = 0.0
                rlf_t[fired] = 0.0
                last_ho_ms[fired] = time_ms
                # a classified mobility failure consumes the handover context;
                # a same-cell reestablishment keeps it for follow-up reports
                classified = fired[early | wrong | late]
                recent_src[classified] = -1
                recent_ms[classified] = -np.inf

        # (5) sessions: completions then new arrivals
        ends = ends_by_step[t]
        if ends:
            ids = np.asarray(ends, dtype=int)
            ids = ids[s_active[ids]]
            if ids.size:
                np.add.at(conc_flat, s_comp[ids], -1)
                np.add.at(user_active, s_rows[ids], -1)
                s_active[ids] = False
                if collect_events:
                    for v in ids:
                        session_events.append(SessionEvent(
                            int(s_rows[v] % n_users), time_s, cell_ids[s_cell[v]],
                            APP_CATEGORIES[s_cat[v]], float(s_bytes[v]), "completed",
                        ))
        for k in range(step_ptr[t], step_ptr[t + 1]):
            row = s_rows[k]
            cell = serving[row]
            e = epoch_row[row]
            cat = int(np.searchsorted(mix_cdf[loc_idx[cell]], rng_sess.random(), side="right"))
            cat = min(cat, len(APP_CATEGORIES) - 1)
            nbytes = float(
                BYTE_MEDIANS[cat]
                * loc_byte_scale[loc_idx[cell]]
                * math.exp(tp.byte_sigma_log * rng_sess.standard_normal())
            )
            dur_steps = max(1, int(math.ceil(rng_sess.exponential(mean_steps))))
            comp = cell * n_epochs + e
            s_cell[k] = cell
            s_comp[k] = comp
            s_cat[k] = cat
            s_bytes[k] = nbytes
            if is_femto[cell] and conc_flat[comp] >= limit:
                blk_flat[comp] += 1.0
                if collect_events:
                    session_events.append(SessionEvent(
                        int(row % n_users), time_s, cell_ids[cell],
                        APP_CATEGORIES[cat], nbytes, "blocked",
                    ))
            else:
                adm_flat[comp] += 1.0
                bytes_flat[comp] += nbytes
                conc_flat[comp] += 1
                user_active[row] += 1
                bytes_user[row] += nbytes
                cat_loc[cat, loc_idx[cell]] += 1.0
                s_active[k] = True
                end = t + dur_steps
                if end < n_steps:
                    ends_by_step[end].append(k)
                if collect_events:
                    session_events.append(SessionEvent(
                        int(row % n_users), time_s, cell_ids[cell],
                        APP_CATEGORIES[cat], nbytes, "admitted",
                    ))

        # (6) movement statistics
        if n_rows:
            pos_sum += pos
            pos_sq += pos[:, 0] ** 2 + pos[:, 1] ** 2
            if collect_events and t % position_sample_every == 0:
                for u in range(n_users):
                    position_samples.append(PositionSample(
                        u, time_s, float(pos[u, 0]), float(pos[u, 1]), cell_ids[serving[u]]
                    ))

    # --- assemble features ---------------------------------------------------
    def grid(flat):
        return flat.reshape(n_cells, n_epochs)

    adm, blk, drop = grid(adm_flat), grid(blk_flat), grid(drop_flat)
    nsamp = grid(nsamp_flat)
    active = attached_any.reshape(n_epochs, n_users, n_cells).sum(axis=1).T.astype(float)
    if n_rows:
        mean_pos = pos_sum / n_steps
        msq = pos_sq / n_steps
        user_rog = np.sqrt(np.maximum(msq - mean_pos[:, 0] ** 2 - mean_pos[:, 1] ** 2, 0.0))
    else:
        user_rog = np.zeros(0)
    rog_ec = np.zeros((n_cells, n_epochs))
    att3 = attached_any.reshape(n_epochs, n_users, n_cells)
    for e in range(n_epochs):
        den = att3[e].sum(axis=0)
        num = user_rog[e * n_users : (e + 1) * n_users] @ att3[e]
        rog_ec[:, e] = np.divide(num, den, out=np.zeros(n_cells), where=den > 0)

    def ratio(num, den):
        return np.divide(num, den, out=np.zeros_like(num, dtype=float), where=den > 0)

    att = grid(att_flat)
    features = np.stack(
        [
            ratio(drop, adm),
            ratio(blk, adm + blk),
            ratio(grid(bad_flat), nsamp),
            att,
            grid(late_flat),
            grid(early_flat),
            grid(wrong_flat),
            ratio(grid(rssi_flat), nsamp),
            ratio(grid(sinr_flat), nsamp),
            grid(bytes_flat),
            active,
            rog_ec,
            ratio(att, active),
        ],
        axis=2,
    )

    result = RunResult(
        cell_ids=cell_ids,
        features=features,
        labels=labels,
        user_ho_counts=ho_user.reshape(n_epochs, n_users),
        user_bytes=bytes_user.reshape(n_epochs, n_users),
        user_distance=dist_user.reshape(n_epochs, n_users),
        user_rog=user_rog.reshape(n_epochs, n_users),
        cat_loc_counts=cat_loc,
    )
    if collect_events:
        result.handover_events = [
            HandoverEvent(u, ts, s, g, HandoverOutcome(o)) for u, ts, s, g, o in ho_events
        ]
        result.session_events = session_events
        result.position_samples = position_samples
    return result


def _new_ped_waypoints(rng, homes: np.ndarray, home_range: float, region) -> np.ndarray:
    k = len(homes)
    r = home_range * np.sqrt(rng.random(k))
    theta = rng.uniform(0.0, 2.0 * np.pi, k)
    out = homes + np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return np.clip(out, [0.0, 0.0], list(region))
