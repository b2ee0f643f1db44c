"""Small consensus problems with known minimisers, shared by several test files."""

import math

import numpy as np

from mpfusion.agents import PoseAgent, ProxParams, QuadraticPriorAgent, identity_agent
from mpfusion.geometry import EXACT_LATTICE, PoseTransform, Volume
from mpfusion.mace import ConsensusConfig
from mpfusion.projector import ScanGeometry, Sinogram

from oracles import dense_volume_matrix, difference_matrix, lattice_permutation

# sigma 0.5 suits the 16x16 problem's curvature; the Mann rate depends on it
EXACT = ProxParams(sigma=0.5, cg_tol=1e-12, cg_max_iters=2000)
TWO_POSE_CONSENSUS = ConsensusConfig(beta=0.5, rho=0.5, max_iters=200, stop_tol=1e-10)


def scalar_prox(target, sigma=1.0):
    """Proximal map of 1/2 (x - target)^2 at strength sigma."""
    def agent(v):
        return v.with_values((v.values + sigma**2 * target) / (1 + sigma**2))
    return agent


def toy_problem():
    """Two scalar quadratics centred at 2 and 4 plus a zero prior; the minimiser is 3."""
    x0 = Volume(np.zeros((1, 1, 1)))
    agents = [scalar_prox(2.0), scalar_prox(4.0), identity_agent]
    cfg = ConsensusConfig(beta=0.5, rho=0.5, max_iters=500, stop_tol=1e-14)
    return x0, agents, cfg


def two_pose_problem(seed=0, lam=0.5):
    """16x16 slice seen from two in-plane poses, plus a quadratic prior.

    Returns the agents, the start image and the dense joint minimiser of
    sum_k 1/2 ||y_k - A T_k x||^2_W + lam/2 ||D x||^2.
    """
    rng = np.random.default_rng(seed)
    dims = (16, 16, 1)
    g = ScanGeometry.uniform(12, 1, 24, 1.0)
    a = dense_volume_matrix(16, 16, 1, 1.0, 1.0, g.angles, 24, 1.0)
    transforms = [PoseTransform.identity(), PoseTransform.about_axis("z", math.pi / 2, interpolation=EXACT_LATTICE)]
    truth = rng.uniform(0, 1, 256)
    lhs = lam * difference_matrix(dims).T @ difference_matrix(dims)
    rhs = np.zeros(256)
    agents = []
    for t in transforms:
        ap = a @ lattice_permutation(t.matrix, dims)
        w = rng.uniform(0.3, 1.0, ap.shape[0])
        y = ap @ truth + 0.05 * rng.standard_normal(ap.shape[0])
        lhs += ap.T @ (w[:, None] * ap)
        rhs += ap.T @ (w * y)
        agents.append(PoseAgent(Sinogram(g, y.reshape(g.shape), w.reshape(g.shape)), t, EXACT))
    agents.append(QuadraticPriorAgent(lam, EXACT))
    joint = np.linalg.solve(lhs, rhs)
    return agents, Volume(np.zeros(dims)), joint
