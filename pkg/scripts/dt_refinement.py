"""One step of size h against two of size h/2, with and without noise.

Without noise the gap is the local error of exponential Euler, O(h^2). With
the two half-step noises summed into the full-step noise, the gap is
dominated by the drift responding to the mid-step noise, O(h^1.5).
"""
import numpy as np

from sqe2d.dynamics import RunConfig, SqeState, sinh_model, smooth_field, step_full
from sqe2d.gaussian import ou_noise, sample_gff
from sqe2d.rng import stream
from sqe2d.spectral import Grid, SpectralCutoff, sobolev_norm


def gap(h, phi, nu, noisy, reps=200):
    full, half = RunConfig(dt=h), RunConfig(dt=h / 2)
    grid, c = phi.grid, full.cutoff
    rng = stream(1, int(1 / h))
    out = []
    for _ in range(reps if noisy else 1):
        if noisy:
            # exact coupling of the stochastic convolution over [0, h] and its two halves
            n1 = ou_noise(rng, grid, c, h / 2)
            n2 = ou_noise(rng, grid, c, h / 2)
            decay = np.exp(-0.25 * h * (1 + grid.abs2()))
            big = n1 * decay + n2
        else:
            n1 = n2 = big = np.zeros(grid.shape)
        one = step_full(SqeState(0.0, phi), full, nu, noise=big)
        two = step_full(step_full(SqeState(0.0, phi), half, nu, noise=n1), half, nu, noise=n2)
        out.append(sobolev_norm(one.phi - two.phi, -0.5))
    return float(np.sqrt(np.mean(np.square(out))))


def main():
    grid = Grid(16)
    c = SpectralCutoff(2.0, 2)
    phi = sample_gff(stream(4), c, grid) + smooth_field(grid, 4)
    nu = sinh_model(1.0)
    hs = np.array([0.04, 0.02, 0.01, 0.005, 0.0025])
    for noisy in (False, True):
        g = np.array([gap(h, phi, nu, noisy) for h in hs])
        slope = np.polyfit(np.log(hs), np.log(g), 1)[0]
        print(f"noise={noisy}: gaps {' '.join(f'{x:.3g}' for x in g)}  slope {slope:.3f}")


if __name__ == "__main__":
    main()
