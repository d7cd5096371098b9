"""Build a light path by hand and inspect it.

Light enters A_{1,0} and leaves at A_{2,5} after eight TBUs, so the
transmission is 0.99**8 (about -0.70 dB) and the phase turns once every 1/8
of the reference span (0.25 normalized units). Ports carrying more than 0.2
are listed, which traces the path.

    python3 demos/hand_routed_path.py
"""
import numpy as np

from meshlight.autodiff import response_jacobian
from meshlight.mesh import MeshSpec, solve_fields
from meshlight.objectives import make_grid, unit_excitation
from meshlight.reporting import coupling_and_common_phase


def routed_mesh(n=5, alpha=0.99):
    """Every vertical TBU crossed, every horizontal barred except two on the top row."""
    spec = MeshSpec.uniform(n, n, alpha=alpha)
    th_v, ph_v = np.zeros((n, n)), np.zeros((n, n))
    th_h, ph_h = np.zeros((n + 1, n)), np.full((n + 1, n), np.pi)
    ph_h[0, 1] = ph_h[0, 3] = 0.0
    return spec.with_params(np.concatenate([th_v.ravel(), ph_v.ravel(), th_h.ravel(), ph_h.ravel()]))


def main():
    spec = routed_mesh()
    a0 = unit_excitation(spec.n_ports, 1)
    grid = make_grid(101, (-0.5, 0.5))
    a = response_jacobian(spec, grid.points, a0, with_jacobian=False).responses[:, 2]
    slope = np.polyfit(grid.normalized, np.unwrap(np.angle(a)), 1)[0]
    print(f"|A_(2,5)| = {20 * np.log10(abs(a[0])):.4f} dB (0.99**8 gives {20 * np.log10(0.99 ** 8):.4f})")
    print(f"phase period {2 * np.pi / abs(slope):.4f} normalized units")

    ratio, _ = coupling_and_common_phase(spec.theta_h, spec.phi_h)
    print("horizontal coupling ratios (1 = cross):")
    print(np.array2string(ratio, precision=2, suppress_small=True))

    f = solve_fields(spec, spec.constants.omega_center, a0)
    print("ports above 0.2 at the band center:")
    for name, arr in f.magnitudes().items():
        for (r, c) in zip(*np.nonzero(arr > 0.2)):
            print(f"  {name}[{r},{c}] = {arr[r, c]:.4f}")


if __name__ == "__main__":
    main()
