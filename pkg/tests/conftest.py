import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile('default', deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile('default')


def pytest_terminal_summary(terminalreporter):
  mod = sys.modules.get('test_acceptance')
  if mod is None or not mod.RESULTS:
    return
  terminalreporter.section('acceptance criteria')
  for n in sorted(mod.RESULTS):
    terminalreporter.write_line(mod.RESULTS[n])
