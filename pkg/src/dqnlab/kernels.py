"""Numeric kernels: dense-network math, the fused DDQN update, and the
classic-control dynamics.

Nearly everything here is written once in numpy style and either compiled
with numba or run as-is, depending on the active backend (see
:mod:`dqnlab.backend`); the one exception is the Adam inner update, which
has a loop form for the compiler and a vectorized form for numpy with
identical arithmetic. These are the hot inner loops; they take raw arrays
and scalars only. The friendly typed APIs live in :mod:`dqnlab.nn`,
:mod:`dqnlab.envs` and :mod:`dqnlab.agent`.

Network parameters travel as one flat float64 vector. The layout, also used
by the snapshot file format (see docs/formats.md), is: for each layer in
order, the weight matrix in row-major order (out_dim x in_dim) followed by
the bias vector (out_dim). A network architecture is described by five small
int64 arrays (in_dims, out_dims, acts, w_offs, b_offs) built in
:mod:`dqnlab.nn`. Activation codes: 0 identity, 1 ReLU, 2 tanh.

Gradient caches hold post-activations only; the derivative of each supported
activation is computable from its output (identity: 1, ReLU: output > 0,
tanh: 1 - output^2). ReLU's derivative at exactly 0 is 0 under this rule.
"""

import math

import numpy as np

from . import backend
from .backend import jit
from .rng import rng_randint, rng_uniform

ACT_IDENTITY = 0
ACT_RELU = 1
ACT_TANH = 2

# MountainCar-v0 constants
MC_MIN_POS = -1.2
MC_MAX_POS = 0.6
MC_MAX_SPEED = 0.07
MC_GOAL_POS = 0.5
MC_FORCE = 0.001
MC_GRAVITY = 0.0025

# CartPole-v0 constants
CP_GRAVITY = 9.8
CP_MASS_CART = 1.0
CP_MASS_POLE = 0.1
CP_TOTAL_MASS = CP_MASS_CART + CP_MASS_POLE
CP_HALF_POLE = 0.5
CP_POLEMASS_LENGTH = CP_MASS_POLE * CP_HALF_POLE
CP_FORCE_MAG = 10.0
CP_TAU = 0.02
CP_X_LIMIT = 2.4
CP_THETA_LIMIT = 12.0 * 2.0 * math.pi / 360.0

# Acrobot-v1 constants (two identical unit links, torque on the elbow joint)
AC_LINK_LENGTH_1 = 1.0
AC_LINK_MASS_1 = 1.0
AC_LINK_MASS_2 = 1.0
AC_LINK_COM_1 = 0.5
AC_LINK_COM_2 = 0.5
AC_LINK_MOI = 1.0
AC_GRAVITY = 9.8
AC_DT = 0.2
AC_MAX_VEL_1 = 4.0 * math.pi
AC_MAX_VEL_2 = 9.0 * math.pi


# ---------------------------------------------------------------------------
# dense network
# ---------------------------------------------------------------------------


@jit
def mlp_forward(flat, in_dims, out_dims, acts, w_offs, b_offs, X, want_cache):
    """Batched forward pass.

    X is (n, in_dims[0]). Returns (out, cache) where out is
    (n, out_dims[-1]) and cache concatenates each layer's post-activation
    matrix, flattened in layer order. When want_cache is 0 the cache is
    returned empty.
    """
    n = X.shape[0]
    n_layers = in_dims.shape[0]
    cache_len = 0
    if want_cache != 0:
        for l in range(n_layers):
            cache_len += n * out_dims[l]
    cache = np.empty(cache_len)
    A = X
    c = 0
    for l in range(n_layers):
        od = out_dims[l]
        idm = in_dims[l]
        W = flat[w_offs[l]:w_offs[l] + od * idm].reshape(od, idm)
        b = flat[b_offs[l]:b_offs[l] + od]
        if want_cache != 0:
            out = cache[c:c + n * od].reshape(n, od)
            c += n * od
        else:
            out = np.empty((n, od))
        np.dot(A, W.T, out)
        out += b
        if acts[l] == ACT_RELU:
            np.maximum(out, 0.0, out)
        elif acts[l] == ACT_TANH:
            np.tanh(out, out)
        A = out
    return A, cache


@jit
def mlp_backward(flat, in_dims, out_dims, acts, w_offs, b_offs, X, cache, out_grad):
    """Exact reverse-mode gradient of sum(out_grad * out) w.r.t. the flat
    parameter vector. cache must come from mlp_forward(..., want_cache=1)
    on the same (flat, X)."""
    n = X.shape[0]
    n_layers = in_dims.shape[0]
    grad = np.empty(flat.shape[0])
    c_offs = np.empty(n_layers + 1, dtype=np.int64)
    c_offs[0] = 0
    for l in range(n_layers):
        c_offs[l + 1] = c_offs[l] + n * out_dims[l]
    G = out_grad
    for l in range(n_layers - 1, -1, -1):
        od = out_dims[l]
        idm = in_dims[l]
        A = cache[c_offs[l]:c_offs[l + 1]].reshape(n, od)
        if l == n_layers - 1:
            # G aliases the caller's out_grad here; never scale it in place.
            if acts[l] == ACT_RELU:
                dZ = np.where(A > 0.0, G, 0.0)
            elif acts[l] == ACT_TANH:
                dZ = A * A
                np.subtract(1.0, dZ, dZ)
                dZ *= G
            else:
                dZ = G
        else:
            # G is this function's own allocation; fold the activation
            # derivative into it to avoid another batch-sized temporary.
            if acts[l] == ACT_RELU:
                G *= (A > 0.0)
            elif acts[l] == ACT_TANH:
                tmp = A * A
                np.subtract(1.0, tmp, tmp)
                G *= tmp
            dZ = G
        if l == 0:
            prev = X
        else:
            prev = cache[c_offs[l - 1]:c_offs[l]].reshape(n, in_dims[l])
        gW = grad[w_offs[l]:w_offs[l] + od * idm].reshape(od, idm)
        np.dot(dZ.T, prev, gW)
        grad[b_offs[l]:b_offs[l] + od] = np.sum(dZ, 0)
        if l > 0:
            W = flat[w_offs[l]:w_offs[l] + od * idm].reshape(od, idm)
            G = np.dot(dZ, W)
    return grad


@jit
def q_values(flat, in_dims, out_dims, acts, w_offs, b_offs, obs):
    """Network outputs for a single observation vector."""
    out, _ = mlp_forward(flat, in_dims, out_dims, acts, w_offs, b_offs,
                         obs.reshape(1, obs.shape[0]), 0)
    return out[0]


@jit
def greedy_action(flat, in_dims, out_dims, acts, w_offs, b_offs, obs):
    """Argmax of the network outputs; ties break to the lowest index."""
    q = q_values(flat, in_dims, out_dims, acts, w_offs, b_offs, obs)
    best = 0
    for j in range(1, q.shape[0]):
        if q[j] > q[best]:
            best = j
    return best


@jit
def select_action(flat, in_dims, out_dims, acts, w_offs, b_offs, obs, eps, rng_state):
    """Epsilon-greedy draw. One uniform is consumed per call; a second draw
    picks the random action when it fires."""
    u = rng_uniform(rng_state)
    if u < eps:
        return rng_randint(rng_state, out_dims[out_dims.shape[0] - 1])
    return greedy_action(flat, in_dims, out_dims, acts, w_offs, b_offs, obs)


def _adam_update_vec(params, grad, m, v, t, alpha, beta1, beta2, eps):
    t_new = t + 1
    bc1 = 1.0 - beta1 ** t_new
    bc2 = 1.0 - beta2 ** t_new
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    params -= alpha * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return t_new


def _adam_update_loop(params, grad, m, v, t, alpha, beta1, beta2, eps):
    t_new = t + 1
    bc1 = 1.0 - beta1 ** t_new
    bc2 = 1.0 - beta2 ** t_new
    for k in range(params.shape[0]):
        mk = beta1 * m[k] + (1.0 - beta1) * grad[k]
        vk = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k]
        m[k] = mk
        v[k] = vk
        params[k] -= alpha * (mk / bc1) / (math.sqrt(vk / bc2) + eps)
    return t_new


# One bias-corrected Adam step, in place; returns the new step count. The
# arithmetic is identical in both variants; the single-pass loop form is
# what the compiler wants, the vectorized form is what numpy wants.
if backend.ACTIVE == "numba":
    adam_update = jit(_adam_update_loop)
else:
    adam_update = _adam_update_vec


@jit
def ddqn_targets_batch(online, target, in_dims, out_dims, acts, w_offs, b_offs,
                       S2, R, DONE, gamma):
    """Double-DQN regression targets: the online network picks the next
    action, the target network evaluates it. Terminal transitions
    (DONE > 0.5) cut the bootstrap."""
    q_on, _ = mlp_forward(online, in_dims, out_dims, acts, w_offs, b_offs, S2, 0)
    q_tg, _ = mlp_forward(target, in_dims, out_dims, acts, w_offs, b_offs, S2, 0)
    n = S2.shape[0]
    n_actions = q_on.shape[1]
    y = np.empty(n)
    for i in range(n):
        best = 0
        for j in range(1, n_actions):
            if q_on[i, j] > q_on[i, best]:
                best = j
        if DONE[i] > 0.5:
            y[i] = R[i]
        else:
            y[i] = R[i] + gamma * q_tg[i, best]
    return y


@jit
def train_on_batch(online, target, in_dims, out_dims, acts, w_offs, b_offs,
                   S, A, R, S2, DONE, gamma, m, v, t, alpha, beta1, beta2, eps):
    """One squared-loss minibatch update of the online parameters.

    Loss is the batch mean of (Q(s, a) - y)^2 with y from
    ddqn_targets_batch; the gradient flows through Q(s, a) only. Returns
    (pre-update loss, new Adam step count). online, m and v are updated in
    place."""
    y = ddqn_targets_batch(online, target, in_dims, out_dims, acts,
                           w_offs, b_offs, S2, R, DONE, gamma)
    q, cache = mlp_forward(online, in_dims, out_dims, acts, w_offs, b_offs, S, 1)
    n = S.shape[0]
    G = np.zeros((n, q.shape[1]))
    loss = 0.0
    for i in range(n):
        d = q[i, A[i]] - y[i]
        loss += d * d
        G[i, A[i]] = 2.0 * d / n
    loss /= n
    grad = mlp_backward(online, in_dims, out_dims, acts, w_offs, b_offs, S, cache, G)
    t_new = adam_update(online, grad, m, v, t, alpha, beta1, beta2, eps)
    return loss, t_new


@jit
def draw_indices(rng_state, size, out):
    """Uniform with-replacement index draws, one randint per slot in order."""
    for i in range(out.shape[0]):
        out[i] = rng_randint(rng_state, size)


@jit
def train_from_buffer(online, target, in_dims, out_dims, acts, w_offs, b_offs,
                      buf_s, buf_a, buf_r, buf_s2, buf_done, size, batch_size,
                      rng_state, gamma, m, v, t, alpha, beta1, beta2, eps):
    """Sample a uniform minibatch from the replay arrays and apply one
    train_on_batch update."""
    idx = np.empty(batch_size, dtype=np.int64)
    draw_indices(rng_state, size, idx)
    S = buf_s[idx]
    A = buf_a[idx]
    R = buf_r[idx]
    S2 = buf_s2[idx]
    D = buf_done[idx]
    return train_on_batch(online, target, in_dims, out_dims, acts, w_offs, b_offs,
                          S, A, R, S2, D, gamma, m, v, t, alpha, beta1, beta2, eps)


# ---------------------------------------------------------------------------
# environment dynamics
# ---------------------------------------------------------------------------


@jit
def mc_step(p, v, action):
    """MountainCar-v0 transition. Returns (p', v', at_goal)."""
    v = v + (action - 1) * MC_FORCE + math.cos(3.0 * p) * (-MC_GRAVITY)
    if v > MC_MAX_SPEED:
        v = MC_MAX_SPEED
    elif v < -MC_MAX_SPEED:
        v = -MC_MAX_SPEED
    p = p + v
    if p > MC_MAX_POS:
        p = MC_MAX_POS
    elif p < MC_MIN_POS:
        p = MC_MIN_POS
    if p == MC_MIN_POS and v < 0.0:
        v = 0.0
    return p, v, p >= MC_GOAL_POS


@jit
def cp_step(x, xd, th, thd, action):
    """CartPole-v0 transition: semi-explicit Euler with tau = 0.02 s and a
    +/-10 N horizontal force. Returns (x', xd', th', thd', failed)."""
    force = CP_FORCE_MAG if action == 1 else -CP_FORCE_MAG
    costh = math.cos(th)
    sinth = math.sin(th)
    temp = (force + CP_POLEMASS_LENGTH * thd * thd * sinth) / CP_TOTAL_MASS
    thacc = (CP_GRAVITY * sinth - costh * temp) / (
        CP_HALF_POLE * (4.0 / 3.0 - CP_MASS_POLE * costh * costh / CP_TOTAL_MASS))
    xacc = temp - CP_POLEMASS_LENGTH * thacc * costh / CP_TOTAL_MASS
    x = x + CP_TAU * xd
    xd = xd + CP_TAU * xacc
    th = th + CP_TAU * thd
    thd = thd + CP_TAU * thacc
    failed = x < -CP_X_LIMIT or x > CP_X_LIMIT or th < -CP_THETA_LIMIT or th > CP_THETA_LIMIT
    return x, xd, th, thd, failed


@jit
def _acro_dsdt(th1, th2, w1, w2, torque):
    m1 = AC_LINK_MASS_1
    m2 = AC_LINK_MASS_2
    l1 = AC_LINK_LENGTH_1
    lc1 = AC_LINK_COM_1
    lc2 = AC_LINK_COM_2
    i1 = AC_LINK_MOI
    i2 = AC_LINK_MOI
    g = AC_GRAVITY
    d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * math.cos(th2)) + i1 + i2
    d2 = m2 * (lc2 * lc2 + l1 * lc2 * math.cos(th2)) + i2
    phi2 = m2 * lc2 * g * math.cos(th1 + th2 - math.pi / 2.0)
    phi1 = (-m2 * l1 * lc2 * w2 * w2 * math.sin(th2)
            - 2.0 * m2 * l1 * lc2 * w2 * w1 * math.sin(th2)
            + (m1 * lc1 + m2 * l1) * g * math.cos(th1 - math.pi / 2.0)
            + phi2)
    a2 = ((torque + d2 / d1 * phi1 - m2 * l1 * lc2 * w1 * w1 * math.sin(th2) - phi2)
          / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1))
    a1 = -(d2 * a2 + phi1) / d1
    return w1, w2, a1, a2


@jit
def _wrap_pi(x):
    while x > math.pi:
        x = x - 2.0 * math.pi
    while x < -math.pi:
        x = x + 2.0 * math.pi
    return x


@jit
def acro_step(th1, th2, w1, w2, action):
    """Acrobot-v1 transition: one RK4 step of 0.2 s with elbow torque
    action - 1 in {-1, 0, +1}, then angle wrapping to [-pi, pi] and velocity
    clamping at (4 pi, 9 pi). Returns (th1', th2', w1', w2', at_goal)."""
    torque = float(action - 1)
    h = AC_DT
    k1a, k1b, k1c, k1d = _acro_dsdt(th1, th2, w1, w2, torque)
    k2a, k2b, k2c, k2d = _acro_dsdt(th1 + 0.5 * h * k1a, th2 + 0.5 * h * k1b,
                                    w1 + 0.5 * h * k1c, w2 + 0.5 * h * k1d, torque)
    k3a, k3b, k3c, k3d = _acro_dsdt(th1 + 0.5 * h * k2a, th2 + 0.5 * h * k2b,
                                    w1 + 0.5 * h * k2c, w2 + 0.5 * h * k2d, torque)
    k4a, k4b, k4c, k4d = _acro_dsdt(th1 + h * k3a, th2 + h * k3b,
                                    w1 + h * k3c, w2 + h * k3d, torque)
    th1 = th1 + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
    th2 = th2 + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
    w1 = w1 + h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
    w2 = w2 + h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
    th1 = _wrap_pi(th1)
    th2 = _wrap_pi(th2)
    if w1 > AC_MAX_VEL_1:
        w1 = AC_MAX_VEL_1
    elif w1 < -AC_MAX_VEL_1:
        w1 = -AC_MAX_VEL_1
    if w2 > AC_MAX_VEL_2:
        w2 = AC_MAX_VEL_2
    elif w2 < -AC_MAX_VEL_2:
        w2 = -AC_MAX_VEL_2
    at_goal = -math.cos(th1) - math.cos(th2 + th1) > 1.0
    return th1, th2, w1, w2, at_goal
