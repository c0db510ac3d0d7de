import argparse
import logging
import sys
import time
from exceptions import PcadReachError
from pipeline import PHASES, FlowpipeRunner
from utils import load_config, resolve_out, resolve_threads

'''
Command line front end. Every phase is its own subcommand reading the artifacts of the earlier
phases from --out; 'run' chains all of them.

    python main.py run --config configs/linear2d.json --out runs/linear2d --threads 4
    python main.py calibrate --config configs/linear2d.json --out runs/linear2d
'''


def _runner(args):
    config = load_config(args.config)
    out = resolve_out(args.out, args.config)
    return FlowpipeRunner(config, out, threads = resolve_threads(args.threads))


def cmd_simulate(args):
    _runner(args).run_phase('simulate')


def cmd_train(args):
    _runner(args).run_phase('train')


def cmd_reach(args):
    _runner(args).run_phase('reach')


def cmd_calibrate(args):
    _runner(args).run_phase('calibrate')


def cmd_inflate(args):
    _runner(args).run_phase('inflate')


def cmd_validate(args):
    _runner(args).run_phase('validate')


def cmd_report(args):
    runner = _runner(args)
    runner.run_phase('report')
    if args.concatenated:
        runner.export_concatenated()


def cmd_run(args):
    runner = _runner(args)
    logging.info('PARENT --- Started run from phase {} at {}'.format(args.phase, time.ctime()))
    runner.run(start_phase = args.phase)
    if args.concatenated:
        runner.export_concatenated()


COMMANDS = {
    'simulate': cmd_simulate,
    'train': cmd_train,
    'reach': cmd_reach,
    'calibrate': cmd_calibrate,
    'inflate': cmd_inflate,
    'validate': cmd_validate,
    'run': cmd_run,
    'report': cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog = 'pcadreach', description = 'delta-confident flowpipes from ReLU surrogates and PCA-based conformal inflation')
    sub = parser.add_subparsers(dest = 'command', required = True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument('--config', required = True, help = 'JSON config file')
        p.add_argument('--out', default = None, help = 'artifact folder (default: $PCADDREACH_OUT or runs/<config name>)')
        p.add_argument('--threads', type = int, default = None, help = 'worker count, 0 = one per CPU (default: $PCADDREACH_THREADS or 1)')
        if name == 'run':
            p.add_argument('--phase', default = 'simulate', choices = PHASES, help = 'first phase to run; earlier artifacts must exist')
        if name in ('run', 'report'):
            p.add_argument('--concatenated', action = 'store_true', help = 'also export the whole-trajectory star')
    return parser


def main(argv = None):
    '''
    Returns:
        code (int) -- 0 on success, else the exit code of the error category
    '''
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except PcadReachError as e:
        logging.error('PARENT --- {} failed: {}'.format(args.command, e))
        print('error: {}'.format(e), file = sys.stderr)
        return e.exit_code
    except Exception as e:
        logging.exception('PARENT --- {} failed'.format(args.command))
        print('error: {}: {}'.format(type(e).__name__, e), file = sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
