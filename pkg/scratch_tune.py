"""Scratch experiment runner for tuning the kv-lookup acceptance setup."""

import sys
import time
import numpy as np

from latentlink.config import ExperimentConfig
from latentlink import workflows as W
from latentlink.encoding import pad_region
from latentlink.pipelines import standard_pipelines, run_suite, accuracy_by_pipeline
from latentlink.planner import UnmaskingSchedule, sample
from latentlink.encoding import planner_prompt
from latentlink.projector import plan_latents, executor_suffix_ids, answer_target_ids
from latentlink import executor as E

cfg = ExperimentConfig()
cfg.out_dir = sys.argv[1] if len(sys.argv) > 1 else "/tmp/tune1"
print("config:", cfg.data, cfg.layout, cfg.planner_train, cfg.executor_train)

t0 = time.perf_counter()
W.cmd_train_planner(cfg)
print(f"planner trained in {time.perf_counter()-t0:.1f}s")

t0 = time.perf_counter()
W.cmd_train_executor(cfg)
print(f"executor trained in {time.perf_counter()-t0:.1f}s")

# inspect: planner plan quality + executor behavior per plan type
vocab = W.build_vocab()
layout = W.layout_of(cfg)
train, val, test = W.load_splits(cfg)
planner, _, _ = W.load_agent(f"{cfg.out_dir}/planner.ldarm")
executor, _, _ = W.load_agent(f"{cfg.out_dir}/executor.ldarm")
planner.set_frozen(True); executor.set_frozen(True)
sched = UnmaskingSchedule.uniform(layout.plan_width, cfg.layout.schedule_steps)

plan_exact = plan_v1 = 0
n_check = 80
for s in list(val)[:n_check]:
    prompt = planner_prompt(vocab, s.question)
    final = sample(planner, prompt, layout.plan_width, sched)
    ptext = vocab.decode(final[len(prompt):], strict=False)
    want = s.plan[:layout.plan_width]
    plan_exact += int(ptext == want)
    # value of first queried key appears at position 2 of "K=v;..."
    plan_v1 += int(len(ptext) >= 3 and len(want) >= 3 and ptext[2] == want[2])
print(f"planner plan region: exact={plan_exact}/{n_check} first-value={plan_v1}/{n_check}")

def exec_acc(plan_fn, split, n=80):
    hits = 0
    rows = list(split)[:n]
    for s in rows:
        plan_ids = pad_region(vocab.encode(plan_fn(s)), layout.plan_width)
        prefix = executor.prefix_sequence(executor.embed(plan_ids),
                                          executor_suffix_ids(vocab, s.question))
        ids, _ = E.greedy_decode(executor, prefix, cfg.layout.decode_budget)
        hits += int(vocab.decode(ids, strict=False) == s.answer)
    return hits / len(rows)

print("executor acc given TRUE full plan (truncated):", exec_acc(lambda s: s.plan, val))
print("executor acc given answer-as-plan:", exec_acc(lambda s: s.answer, val))
print("executor acc given empty plan:", exec_acc(lambda s: "", val))
