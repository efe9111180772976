"""Memorise a tiny pool of random sequences and report epochs to train HR@1 >= 0.95."""
import argparse
import time

from m3rec.experiments import overfit

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--seqs", type=int, default=50)
p.add_argument("--vocab", type=int, default=20)
p.add_argument("--dim", type=int, default=32)
p.add_argument("--lr", type=float, default=1e-2)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()
t0 = time.perf_counter()
epochs, hr = overfit(args.seqs, args.vocab, args.dim, lr=args.lr, seed=args.seed)
print(f"train HR@1 {hr:.4f} after {epochs} epochs ({time.perf_counter() - t0:.1f}s)")
