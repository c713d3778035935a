"""Training the relational learner purely in latent space.

Relation tuples are sampled from the prior itself — no image data is
involved — so the relational network can be trained and evaluated on any
well-separated mixture. A couple of thousand steps suffice for nearly
perfect single-step accuracy, and chained (depth > 1) rollouts stay
accurate because outputs land back on the component they name.
"""

import numpy as np
import torch

from weakdis import build_factor_space, builtin_relations
from weakdis.evaluation import relational_eval
from weakdis.networks import ArchConfig, init_params
from weakdis.prior import GMPrior
from weakdis.training import make_relation_batch, relational_loss

rng = np.random.default_rng(0)

# --- a synthetic, well-separated prior over the dsprites grid ---------------

space = build_factor_space("dsprites")
relations = builtin_relations(space)
n_z = 8
means = rng.normal(0, 1, (space.N, n_z))
means += 8.0 * np.sign(rng.standard_normal((space.N, n_z)))  # push components apart
prior = GMPrior(means, np.full((space.N, n_z), 0.5))

# --- a relational learner and its optimizer ---------------------------------

arch = ArchConfig(
    n_z=n_z, height=32, width=32, channels=1, conv_channels=(8, 16, 32),
    mlp_width=256, relation_arity=1, relation_count=len(relations),
)
params = init_params(arch, seed=0)
opt = torch.optim.Adam(params.relational.parameters(), lr=1e-3)

for step in range(1500):
    inputs, codes, targets = make_relation_batch(prior, space, relations, 128, rng)
    out = params.relational(
        torch.from_numpy(inputs.reshape(len(inputs), -1).astype(np.float32)),
        torch.from_numpy(codes.astype(np.float32)),
    )
    loss = relational_loss(prior, out, targets)
    opt.zero_grad(set_to_none=True)
    loss.backward()
    opt.step()
    if step % 300 == 0:
        print(f"step {step:4d} relational loss {loss.item():.3f}")

# --- evaluate chained rollouts ----------------------------------------------

rows = relational_eval(
    prior, space, relations, depths=[1, 5, 10], alphas=[0.0], trials=2000,
    seed=1, params=params,
)
print("\ndepth  accuracy  acceptance")
for r in rows:
    print(f"{r.depth:<6d} {r.accuracy:<9.4f} {r.acceptance_ratio:.4f}")
