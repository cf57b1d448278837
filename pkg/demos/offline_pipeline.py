"""Log traffic, fit the reward model and compare policies offline.

A reduced version of the default experiment (400 users instead of 2,000)
so it finishes in well under a minute. Outputs land in ./demo_run.
Run the full-size version with the ``calband`` command instead:

    calband simulate --out run
    calband train --triplets run/train.jsonl --out run
    calband evaluate --triplets run/eval.jsonl --checkpoint run/model.ckpt --out run
"""
import dataclasses
from pathlib import Path

from calband import cli

exp = cli.load_config()
exp = dataclasses.replace(exp, sim=dataclasses.replace(exp.sim, num_users=400))
out = Path("demo_run")

meta = cli.cmd_simulate(exp, out)
print(f"logged {meta['counts']['train']} training and {meta['counts']['eval']} eval requests")

report = cli.cmd_train(exp, out / "train.jsonl", out)
print(f"validation BCE {report['final_val_bce']:.4f} "
      f"vs constant predictor {report['val_base_rate_bce']:.4f}\n")

rows = cli.cmd_evaluate(exp, out / "eval.jsonl", out / "model.ckpt", out)
print(cli.format_offline_table(rows, exp.ope.cap, exp.evaluate.baseline))
