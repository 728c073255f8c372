"""Real spherical harmonics up to degree 3."""

import numpy as np

# cosine-lobe convolution factors (irradiance from radiance), per degree
COSINE_LOBE = np.array([np.pi, 2 * np.pi / 3, np.pi / 4, 0.0])
# uniform-hemisphere average kernel: integral of P_l(t) over t in [0, 1]
HEMISPHERE_MEAN = np.array([1.0, 0.5, 0.0, -0.125])


def sh_count(deg):
    return (deg + 1) ** 2


def sh_basis(d, deg=2):
    """Real SH basis evaluated at unit directions ``d`` (..., 3); shape (..., (deg+1)^2)."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = [np.full(x.shape, 0.28209479177387814)]
    if deg >= 1:
        c = 0.4886025119029199
        out += [-c * y, c * z, -c * x]
    if deg >= 2:
        out += [
            1.0925484305920792 * x * y,
            -1.0925484305920792 * y * z,
            0.31539156525252005 * (3 * z * z - 1),
            -1.0925484305920792 * x * z,
            0.5462742152960396 * (x * x - y * y),
        ]
    if deg >= 3:
        out += [
            -0.5900435899266435 * y * (3 * x * x - y * y),
            2.890611442640554 * x * y * z,
            -0.4570457994644658 * y * (5 * z * z - 1),
            0.3731763325901154 * z * (5 * z * z - 3),
            -0.4570457994644658 * x * (5 * z * z - 1),
            1.445305721320277 * z * (x * x - y * y),
            -0.5900435899266435 * x * (x * x - 3 * y * y),
        ]
    if deg > 3:
        raise ValueError("degree > 3 not supported")
    return np.stack(out, axis=-1)


def degree_of_index(count):
    return np.concatenate([[l] * (2 * l + 1) for l in range(int(np.sqrt(count)))])
