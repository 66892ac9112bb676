#!/usr/bin/env python

import logging
import sys

from deerwatch.config import PipelineConfig
from deerwatch.core import WindowConfig
from deerwatch.pipeline import Pipeline
from deerwatch.synth import SUITES, make_suite, render
from deerwatch.test import rendering_sequence


def main(argv):
    if '-h' in argv or len(argv) > 2:
        print("./simulate.py [suite [seed]]")
        return 1

    suite = argv[0] if argv else 'jump'
    seed = int(argv[1]) if len(argv) > 1 else 0
    if suite not in SUITES:
        print("unknown suite %s, expected one of: %s" % (suite, ", ".join(SUITES)))
        return 1

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    log = logging.getLogger()

    scenario = make_suite(suite, 1, seed)[0]
    sequence = rendering_sequence(render(scenario))
    config = PipelineConfig(forecaster='extrapolate').validate()
    pipeline = Pipeline(config, sequence, log,
                        window_config=WindowConfig(frame_rate=scenario.frame_rate))

    for event in pipeline.run():
        if event['type'] != 'decision':
            continue
        ttc = '-' if event['ttc'] is None else '%.2fs' % event['ttc']
        print("frame %4d  %s  ttc %-6s %s" % (
            event['frame'], event['track_id'], ttc, 'WARN' if event['warn'] else ''))


if __name__ == '__main__':
    sys.exit(main(sys.argv[1:]) or 0)
