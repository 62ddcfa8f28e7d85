"""Pure-numpy implementations of the hot numerical kernels.

Twin of the compiled extension ``hsmfg._kernels``; same signatures, same
semantics.  Used as the fallback when the extension is not built and as the
reference in the kernel-equivalence tests and the benchmark.
"""

import numpy as np


def rk4_riccati_sweep(A_st, S, P, Pi_end, dt, blowup=1e12):
    """March the backward matrix Riccati ODE with classical RK4.

    The ODE, written in time-to-go tau measured from the terminal instant, is

        dPi/dtau = Pi A + A^T Pi - Pi S Pi + P.

    ``A_st`` holds A sampled at the 2*steps+1 stage points tau = j*dt/2, so
    each step consumes three consecutive samples and no interpolation happens
    inside the sweep.  ``S`` and ``P`` are constant.  The iterate is
    symmetrised after every step.

    Returns ``(Pi, escaped)`` where ``Pi[s]`` is the solution at tau = s*dt
    (index 0 is the terminal value) and ``escaped`` is the step index at
    which the Frobenius norm exceeded ``blowup`` (-1 if it never did; the
    remaining entries are then unwritten).
    """
    A_st = np.ascontiguousarray(A_st, dtype=float)
    steps = (A_st.shape[0] - 1) // 2
    d = A_st.shape[1]
    out = np.empty((steps + 1, d, d))
    Pi = 0.5 * (Pi_end + Pi_end.T)
    out[0] = Pi
    limit = blowup * blowup

    def f(X, A):
        XA = X @ A
        return XA + XA.T - X @ S @ X + P

    for s in range(steps):
        A1 = A_st[2 * s]
        A2 = A_st[2 * s + 1]
        A3 = A_st[2 * s + 2]
        k1 = f(Pi, A1)
        k2 = f(Pi + (0.5 * dt) * k1, A2)
        k3 = f(Pi + (0.5 * dt) * k2, A2)
        k4 = f(Pi + dt * k3, A3)
        Pi = Pi + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        Pi = 0.5 * (Pi + Pi.T)
        out[s + 1] = Pi
        if np.sum(Pi * Pi) > limit:
            return out, s + 1
    return out, -1
