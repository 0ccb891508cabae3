"""dq-frame helpers.

2-vectors are passed as separate ``d``/``q`` arrays so that every model
function broadcasts over trailing batch axes and accepts complex input
(needed for complex-step differentiation).
"""
import numpy as np

# Embedding of the imaginary unit: J = R(pi/2).
J = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotate(d, q, angle):
    """Rotate (d, q) counter-clockwise by ``angle``."""
    c = np.cos(angle)
    s = np.sin(angle)
    return c * d - s * q, s * d + c * q


def rotate_to_network(x_local, theta_unit, theta_g):
    """Map a unit-frame 2-vector into the network frame: R(theta_unit - theta_g) x."""
    x_local = np.asarray(x_local)
    return np.stack(rotate(x_local[0], x_local[1], theta_unit - theta_g))


def rotate_to_local(x_network, theta_unit, theta_g):
    x_network = np.asarray(x_network)
    return np.stack(rotate(x_network[0], x_network[1], theta_g - theta_unit))


def active_power(vd, vq, i_d, i_q):
    """p = v^T i."""
    return vd * i_d + vq * i_q


def converter_reactive_power(vd, vq, i_d, i_q):
    """q = v^T J^T i, the bilinear form used by the converter power measurement."""
    return vd * i_q - vq * i_d


def injected_reactive_power(vd, vq, i_d, i_q):
    """Im(V conj(I)) = v^T J i, the network injection convention (q > 0 supplies vars)."""
    return vq * i_d - vd * i_q
