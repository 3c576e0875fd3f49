"""Independent reference dynamics used by the conformance suite.

These single-step oracles are written directly from the published v0/v1
task definitions in plain scalar Python, on purpose sharing no code with
the production kernels in :mod:`dqnlab.kernels`. The conformance check
(``dqnlab verify-env``) records a long random-action trace with the
production environments and re-derives every transition here, one step at a
time from the recorded predecessor state, so agreement is checked at every
step without compounding round-off.
"""

from __future__ import annotations

import math

from . import envs
from .rng import Prng


def mountain_car_ref(position, velocity, action):
    velocity += (action - 1) * 0.001 + math.cos(3 * position) * (-0.0025)
    velocity = min(max(velocity, -0.07), 0.07)
    position += velocity
    position = min(max(position, -1.2), 0.6)
    if position == -1.2 and velocity < 0:
        velocity = 0.0
    return [position, velocity]


def cart_pole_ref(x, x_dot, theta, theta_dot, action):
    gravity = 9.8
    masspole = 0.1
    total_mass = 1.1
    length = 0.5
    polemass_length = 0.05
    force = 10.0 if action == 1 else -10.0
    tau = 0.02
    costheta = math.cos(theta)
    sintheta = math.sin(theta)
    temp = (force + polemass_length * theta_dot**2 * sintheta) / total_mass
    thetaacc = (gravity * sintheta - costheta * temp) / (
        length * (4.0 / 3.0 - masspole * costheta**2 / total_mass))
    xacc = temp - polemass_length * thetaacc * costheta / total_mass
    return [x + tau * x_dot, x_dot + tau * xacc,
            theta + tau * theta_dot, theta_dot + tau * thetaacc]


def _acrobot_derivs(s, torque):
    m1 = m2 = 1.0
    l1 = 1.0
    lc1 = lc2 = 0.5
    i1 = i2 = 1.0
    g = 9.8
    theta1, theta2, dtheta1, dtheta2 = s
    d1 = (m1 * lc1**2
          + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * math.cos(theta2))
          + i1 + i2)
    d2 = m2 * (lc2**2 + l1 * lc2 * math.cos(theta2)) + i2
    phi2 = m2 * lc2 * g * math.cos(theta1 + theta2 - math.pi / 2)
    phi1 = (-m2 * l1 * lc2 * dtheta2**2 * math.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * math.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * math.cos(theta1 - math.pi / 2)
            + phi2)
    ddtheta2 = ((torque + d2 / d1 * phi1
                 - m2 * l1 * lc2 * dtheta1**2 * math.sin(theta2) - phi2)
                / (m2 * lc2**2 + i2 - d2**2 / d1))
    ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
    return [dtheta1, dtheta2, ddtheta1, ddtheta2]


def acrobot_ref(theta1, theta2, omega1, omega2, action):
    torque = action - 1.0
    dt = 0.2
    s0 = [theta1, theta2, omega1, omega2]
    k1 = _acrobot_derivs(s0, torque)
    k2 = _acrobot_derivs([y + dt / 2 * k for y, k in zip(s0, k1)], torque)
    k3 = _acrobot_derivs([y + dt / 2 * k for y, k in zip(s0, k2)], torque)
    k4 = _acrobot_derivs([y + dt * k for y, k in zip(s0, k3)], torque)
    s = [y + dt / 6 * (a + 2 * b + 2 * c + d)
         for y, a, b, c, d in zip(s0, k1, k2, k3, k4)]

    def wrap(x):
        while x > math.pi:
            x -= 2 * math.pi
        while x < -math.pi:
            x += 2 * math.pi
        return x

    s[0] = wrap(s[0])
    s[1] = wrap(s[1])
    s[2] = min(max(s[2], -4 * math.pi), 4 * math.pi)
    s[3] = min(max(s[3], -9 * math.pi), 9 * math.pi)
    return s


_REF_STEP = {
    envs.EnvId.MOUNTAIN_CAR: mountain_car_ref,
    envs.EnvId.CART_POLE: cart_pole_ref,
    envs.EnvId.ACROBOT: acrobot_ref,
}


def conformance_check(env: envs.EnvId, n_steps: int = 10_000, seed: int = 2024):
    """Drive the production environment for ``n_steps`` random actions
    (resetting at episode ends) and verify every recorded transition against
    the reference single-step oracle.

    Returns (max_abs_deviation, n_steps_checked), where the deviation is the
    max over steps and internal state components.
    """
    rng = Prng(seed)
    action_rng = Prng(seed ^ 0x5DEECE66D)
    state = envs.reset(env, rng)
    ref_step = _REF_STEP[env]
    worst = 0.0
    for _ in range(n_steps):
        action = action_rng.randint(env.n_actions)
        before = [float(x) for x in state.internal]
        result, state = envs.step(env, state, action)
        expected = ref_step(*before, action)
        for got, want in zip(state.internal, expected):
            dev = abs(float(got) - want)
            if dev > worst:
                worst = dev
        if result.done:
            state = envs.reset(env, rng)
    return worst, n_steps


def run_all_conformance(n_steps: int = 10_000, seed: int = 2024):
    """Conformance deviations for every environment, as {env: max_abs_dev}."""
    return {env: conformance_check(env, n_steps, seed)[0] for env in envs.EnvId}
