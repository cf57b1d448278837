"""Online A/B analog: the bandit against the 90-day calibration baseline.

Trains on a reduced log, then serves a fresh week of traffic with users
split between the two policies by a hash of their id. A second run serves
the same policy to both arms (an A/A test), where the lift interval should
straddle zero.
"""
import dataclasses
from pathlib import Path

from calband import cli

exp = cli.load_config()
exp = dataclasses.replace(exp, sim=dataclasses.replace(exp.sim, num_users=600))
out = Path("demo_ab")
cli.cmd_simulate(exp, out)
cli.cmd_train(exp, out / "train.jsonl", out)
model = cli.load_checkpoint(out / "model.ckpt")

print(cli.format_abtest_table(cli.run_abtest(exp, model)))
aa = dataclasses.replace(exp, abtest=dataclasses.replace(exp.abtest, control="cb"))
print(cli.format_abtest_table(cli.run_abtest(aa, model)))
