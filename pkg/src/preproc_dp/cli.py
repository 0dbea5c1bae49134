"""Command-line entry point: preprocess, sensitivity, account, ptr, audit, run-pipeline."""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from preproc_dp import accountant, experiments, oracle, ptr
from preproc_dp.core import (CollectionProfile, ConfigurationError,
                             InfeasibleError, UnsupportedError, read_csv, write_csv)
from preproc_dp.mechanisms import MechanismSpec, rdp_curve, srdp_curve
from preproc_dp.preprocessing import PreprocKind, PreprocSpec, sensitivity, transform

EXIT_INFEASIBLE = 2


def _load_json(arg: str):
  """Inline JSON or a path to a JSON file."""
  if arg.lstrip().startswith(('{', '[')):
    return json.loads(arg)
  with open(arg) as f:
    return json.load(f)


def _dump(obj):
  print(json.dumps(obj, indent=2, default=_json_default))


def _json_default(o):
  if isinstance(o, (np.floating, np.integer)):
    return o.item()
  if isinstance(o, np.ndarray):
    return o.tolist()
  raise TypeError(type(o))



def cmd_preprocess(args) -> int:
  data = read_csv(args.input, normalize=args.normalize)
  spec = PreprocSpec(args.kind, eta=args.eta, k=args.k, model=args.model, m=args.m)
  out = transform(spec, data)
  if isinstance(out, np.ndarray):
    with open(args.output, 'w') as f:
      f.write(','.join(f'x{j}' for j in range(out.shape[1])) + '\n')
      for row in out:
        f.write(','.join(repr(float(v)) for v in row) + '\n')
  else:
    write_csv(out, args.output)
  return 0


def cmd_sensitivity(args) -> int:
  spec = PreprocSpec.from_dict(_load_json(args.preproc))
  profile = CollectionProfile.from_dict(_load_json(args.profile))
  s = sensitivity(spec, profile)
  _dump({'delta2': s.delta2, 'delta_inf': s.delta_inf})
  return 0


def cmd_account(args) -> int:
  mech = MechanismSpec.from_dict(_load_json(args.mechanism))
  pre = PreprocSpec.from_dict(_load_json(args.preproc))
  profile = CollectionProfile.from_dict(_load_json(args.profile))
  dashed = not accountant.table2_supported(mech.kind, pre.kind)
  if args.table2:
    if dashed:
      print(f'error: no tabulated guarantee for {mech.kind.value} with {pre.kind.value}',
            file=sys.stderr)
      return EXIT_INFEASIBLE
    eps_hat = accountant.table2_closed_form(mech.kind, pre, profile, mech.eps, args.alpha)
    eps_dp, delta = accountant.rdp_to_dp(eps_hat, args.alpha, args.delta)
    budget = dict(alpha=args.alpha, eps_hat=eps_hat, eps_dp=eps_dp, delta_dp=delta,
                  provenance=dict(mechanism=mech.kind.value, preproc=pre.kind.value,
                                  method='table2'))
    _dump(budget)
    return 0
  cfg = accountant.ComposeConfig(target_delta=args.delta)
  try:
    b = accountant.account(rdp_curve(mech), srdp_curve(mech, profile), pre, profile,
                           cfg, dashed=dashed)
  except InfeasibleError as e:
    print(f'error: {e}', file=sys.stderr)
    return EXIT_INFEASIBLE
  b.provenance['mechanism'] = mech.kind.value
  _dump(b.to_dict())
  return 0


def cmd_ptr(args) -> int:
  data = read_csv(args.input, normalize=args.normalize)
  if data.labels is None:
    print('error: the ptr command trains logistic regression and needs a label column',
          file=sys.stderr)
    return 1
  cfg = ptr.PtrConfig(beta=args.beta, eps=args.eps, delta=args.delta, k=args.k,
                      T=args.T, lr=args.lr)
  with warnings.catch_warnings():
    warnings.simplefilter('ignore')
    out = ptr.run_ptr(data, cfg, experiments.logistic_grad, args.seed)
  result = out.to_dict()
  try:
    result['budget'] = ptr.ptr_privacy_budget(cfg, CollectionProfile(n=data.n)).to_dict()
  except ConfigurationError as e:
    result['budget'] = None
    result['budget_error'] = str(e)
  _dump(result)
  return 0


def cmd_audit(args) -> int:
  pipe = _load_json(args.pipeline)
  mech = MechanismSpec.from_dict(pipe['mechanism'])
  pre = PreprocSpec.from_dict(pipe['preproc'])
  n, d, p = int(pipe.get('n', 20)), int(pipe.get('d', 2)), int(pipe.get('p', 0))
  rng = np.random.default_rng(args.seed)
  pairs = oracle.random_neighbor_pairs(rng, n, d, args.pairs, p_missing=p)
  audit = oracle.brute_force_budget_audit(mech, pre, pairs, args.alpha)
  prof = dict(pipe.get('profile', {}))
  prof.setdefault('n', n)
  prof.setdefault('p', p)
  profile = CollectionProfile.from_dict(prof)
  sens = sensitivity(pre, profile)
  bound = accountant.compose_best_c(rdp_curve(mech), srdp_curve(mech, profile), sens,
                                    args.alpha)
  _dump({'alpha': args.alpha, 'audit': audit, 'bound': bound, 'pairs': args.pairs,
         'ok': audit <= bound})
  return 0


def cmd_run_pipeline(args) -> int:
  cfg = experiments.ExperimentConfig.from_dict(_load_json(args.config))
  os.makedirs(args.out, exist_ok=True)
  res = experiments.run_comparison(cfg)
  with open(os.path.join(args.out, 'results.csv'), 'w') as f:
    f.write(res.to_csv())
  for name, text in experiments.emit_comparison_curves().items():
    with open(os.path.join(args.out, f'curves_{name}.csv'), 'w') as f:
      f.write(text)
  budgets = []
  for eps in cfg.eps_list:
    data = experiments.make_classification(cfg, cfg.seeds[0])
    try:
      e, b = experiments.preprocessed_mech_eps(cfg, data, eps)
      budgets.append(dict(target_eps=eps, mechanism_eps=e, budget=b.to_dict()))
    except InfeasibleError as err:
      budgets.append(dict(target_eps=eps, error=str(err)))
  with open(os.path.join(args.out, 'budget.json'), 'w') as f:
    json.dump(dict(config=cfg.to_dict(), budgets=budgets,
                   summary={f'{k[0]}/{k[1]}': v for k, v in res.summary().items()}),
              f, indent=2, default=_json_default)
  return EXIT_INFEASIBLE if res.infeasible() else 0


def build_parser() -> argparse.ArgumentParser:
  ap = argparse.ArgumentParser(prog='preproc-dp', description=__doc__)
  sub = ap.add_subparsers(dest='command', required=True)

  p = sub.add_parser('preprocess', help='apply a pre-processing step to a CSV')
  p.add_argument('--kind', required=True, choices=[k.value for k in PreprocKind])
  p.add_argument('--eta', type=float)
  p.add_argument('--k', type=int)
  p.add_argument('--model', choices=['mean', 'median', 'trimmed_mean', 'linear_regression'])
  p.add_argument('--m', type=int, default=0)
  p.add_argument('--input', required=True)
  p.add_argument('--output', required=True)
  p.add_argument('--normalize', action='store_true', help='project rows onto the unit ball')
  p.set_defaults(fn=cmd_preprocess)

  p = sub.add_parser('sensitivity', help='print (delta2, delta_inf)')
  p.add_argument('--preproc', required=True)
  p.add_argument('--profile', required=True)
  p.set_defaults(fn=cmd_sensitivity)

  p = sub.add_parser('account', help='end-to-end privacy budget')
  p.add_argument('--mechanism', required=True)
  p.add_argument('--preproc', required=True)
  p.add_argument('--profile', required=True)
  p.add_argument('--delta', type=float, default=1e-5)
  p.add_argument('--alpha', type=float, default=11.0, help='order for --table2')
  mode = p.add_mutually_exclusive_group()
  mode.add_argument('--table2', action='store_true', help='tabulated closed form')
  mode.add_argument('--generic', action='store_true', help='grid-optimised composer (default)')
  p.set_defaults(fn=cmd_account)

  p = sub.add_parser('ptr', help='propose-test-release PCA + DP-GD')
  p.add_argument('--beta', type=float, required=True)
  p.add_argument('--eps', type=float, required=True)
  p.add_argument('--delta', type=float, required=True)
  p.add_argument('--k', type=int, required=True)
  p.add_argument('--input', required=True)
  p.add_argument('--seed', type=int, default=0)
  p.add_argument('--T', type=int, default=100)
  p.add_argument('--lr', type=float, default=1.0)
  p.add_argument('--normalize', action='store_true')
  p.set_defaults(fn=cmd_ptr)

  p = sub.add_parser('audit', help='exact-divergence audit against the composed bound')
  p.add_argument('--pipeline', required=True)
  p.add_argument('--alpha', type=float, required=True)
  p.add_argument('--pairs', type=int, default=500)
  p.add_argument('--seed', type=int, default=0)
  p.set_defaults(fn=cmd_audit)

  p = sub.add_parser('run-pipeline', help='run the logistic-regression comparison')
  p.add_argument('--config', required=True)
  p.add_argument('--out', required=True)
  p.set_defaults(fn=cmd_run_pipeline)
  return ap


def main(argv=None) -> int:
  args = build_parser().parse_args(argv)
  try:
    return args.fn(args)
  except (UnsupportedError, ConfigurationError) as e:
    print(f'error: {e}', file=sys.stderr)
    return EXIT_INFEASIBLE


if __name__ == '__main__':
  sys.exit(main())
