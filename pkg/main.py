"""
Main Orchestrator for the Temporal Audio-Text Lab
Parses the command line, resolves the run configuration and drives one agent
per command
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from typing import Any, Dict, List, Optional

import yaml

from agents import (
    CorpusAgent,
    EvaluationAgent,
    GradCheckAgent,
    LoggingAgent,
    SweepAgent,
    TrainingAgent
)
from temporal_lab.errors import ConfigError, DataIOError, LabError, NumericError
from temporal_lab.settings import load_run_config, write_schema

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_DATA_IO = 4

DEFAULT_CONFIG = 'config/settings.yaml'


def exit_code_for(error: Optional[BaseException]) -> int:
    """Process exit status of a failed command"""
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    if isinstance(error, DataIOError):
        return EXIT_DATA_IO
    return EXIT_FAILURE


class TemporalLabOrchestrator:
    """Main orchestrator coordinating the agent of one command with the session logger"""

    def __init__(self, config_path: Optional[str] = DEFAULT_CONFIG,
                 overrides: Optional[Dict[str, Any]] = None, log_level: Optional[str] = None):
        """
        Initialize the orchestrator

        Args:
            config_path: YAML/JSON run config; defaults apply when None
            overrides: Dotted-key values from the command line
            log_level: Console log level overriding logging.log_level
        """
        self.config_path = config_path
        self.overrides = overrides or {}
        self.log_level = log_level
        self.config = None
        self.agents = {}
        self.last_error: Optional[BaseException] = None

        self._setup_logging(log_level or 'INFO')
        self.logger = logging.getLogger('TemporalLabOrchestrator')

    def _setup_logging(self, level: str):
        """Setup system-wide logging"""
        logging.basicConfig(
            level=getattr(logging, level.upper(), logging.INFO),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=[
                logging.StreamHandler(sys.stdout)
            ],
            force=True
        )

    def load_config(self) -> bool:
        """
        Resolve the run configuration: flags over file over defaults

        Returns:
            bool: True if successful
        """
        try:
            path = self.config_path if self.config_path and os.path.exists(self.config_path) else None
            if self.config_path and path is None and self.config_path != DEFAULT_CONFIG:
                raise DataIOError(f"Config file {self.config_path} not found")
            self.config = load_run_config(path, self.overrides)
            if not self.log_level:
                self._setup_logging(self.config.logging.log_level)
            self.logger.info(f"Configuration resolved (fingerprint {self.config.fingerprint()[:12]})")
            return True

        except LabError as e:
            self.last_error = e
            self.logger.error(f"Failed to load configuration: {e}")
            return False

    def initialize_agents(self, command: str) -> bool:
        """
        Initialize the session logger and the agent of one command

        Returns:
            bool: True if all agents initialized successfully
        """
        logging_agent = LoggingAgent(asdict(self.config.logging))
        self.agents['logging'] = logging_agent
        if not logging_agent.initialize():
            self.logger.warning("Session log unavailable, continuing without it")

        factories = {
            'gen-data': lambda: CorpusAgent(self.config),
            'train': lambda: TrainingAgent(self.config, on_epoch=logging_agent.log_epoch),
            'eval': lambda: EvaluationAgent(self.config),
            'grad-check': lambda: GradCheckAgent(self.config, on_result=logging_agent.log_grad_check),
            'sweep': lambda: SweepAgent(self.config, on_row=logging_agent.log_sweep_cell),
        }
        agent = factories[command]()
        self.agents[command] = agent
        if not agent.initialize():
            self.last_error = agent.last_error
            self.logger.error(f"Failed to initialize {command} agent")
            return False
        return True

    def _out_dir(self, requested: Optional[str], command: str) -> str:
        if requested:
            return requested
        return os.path.join(self.config.output_root(), f"{command}_{self.config.fingerprint()[:12]}")

    def _save_resolved_config(self, out_dir: str):
        _write_json(os.path.join(out_dir, 'run_config.json'),
                    dict(self.config.to_dict(), resolved_seeds=self.config.resolved_seeds(),
                         fingerprint=self.config.fingerprint()))

    def run(self, command: str, args: argparse.Namespace) -> int:
        """
        Run one command

        Returns:
            Process exit status
        """
        agent = self.agents[command]
        self.agents['logging'].log_command(command, _loggable(args), self.config.fingerprint())

        if command == 'gen-data':
            out_dir = self._out_dir(args.out, command)
            result = agent.process({'out_dir': out_dir, 'write_composites': args.composites})
            if result is not None:
                self._save_resolved_config(out_dir)
                print(f"\n✓ Corpus written to {out_dir}: {result['clips']} clips, "
                      f"{result['stage_a_items']} stage A / {result['stage_b_items']} stage B items")

        elif command == 'train':
            out_dir = self._out_dir(args.out, command)
            result = agent.process({'out_dir': out_dir})
            if result is not None:
                self._save_resolved_config(out_dir)
                print(f"\n✓ Checkpoint: {result['checkpoint']} "
                      f"(held-out loss {result['final_heldout_loss']:.4f})")

        elif command == 'eval':
            result = agent.process({'model': args.model, 'checkpoint': args.checkpoint,
                                    'report': args.report})
            if result is not None:
                self.agents['logging'].log_evaluation(result)
                print()
                for key, value in result.accuracies.items():
                    chance = result.chance.get(key)
                    suffix = f"  (chance {chance:.3f})" if chance is not None else ''
                    print(f"  {key}: {value:.3f}{suffix}")

        elif command == 'grad-check':
            result = agent.process({'corrupt': args.corrupt, 'coords': args.coords,
                                    'h': args.step, 'tolerance': args.tolerance})
            if result is not None:
                if args.out:
                    _write_json(args.out, result)
                print(f"\n✓ {len(result)} gradient configurations within tolerance")

        elif command == 'sweep':
            result = agent.process({'out': args.out, 'seeds': args.seeds, 'jobs': args.jobs})
            if result is not None:
                print()
                print(result.to_string(index=False))

        if result is None:
            self.last_error = agent.last_error
            self.agents['logging'].log_error(str(agent.last_error), {
                'command': command, 'error_type': type(agent.last_error).__name__})
            self.logger.debug(f"Agent status: {self.get_system_status()}")
            print(f"\n✗ {command} failed: {agent.last_error}")
            return exit_code_for(agent.last_error)
        return EXIT_OK

    def shutdown(self):
        """Shutdown all agents and cleanup"""
        for agent_name, agent in self.agents.items():
            try:
                agent.shutdown()
            except Exception as e:
                self.logger.error(f"Error shutting down {agent_name} agent: {e}")

    def get_system_status(self) -> Dict[str, Any]:
        return {name: agent.get_status() for name, agent in self.agents.items()}


def _write_json(path: str, data: Any):
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2)
    except OSError as e:
        raise DataIOError(f"Cannot write {path}: {e}") from e


def _loggable(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in vars(args).items() if v is not None}


def _parse_set(values: Optional[List[str]]) -> Dict[str, Any]:
    """--set key=value pairs; values are parsed as YAML scalars"""
    overrides = {}
    for item in values or []:
        if '=' not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        key, raw = item.split('=', 1)
        try:
            overrides[key.strip()] = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse --set value '{raw}': {e}") from e
    return overrides


def _task_list(value: str) -> List[int]:
    """One --tasks token: '3' or a comma-separated list such as '1,2,3'"""
    try:
        return [int(part) for part in value.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid task list '{value}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='temporal-lab',
        description='Temporal contrastive post-training of audio-text embeddings'
    )
    sub = parser.add_subparsers(dest='command', required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=DEFAULT_CONFIG, help='YAML/JSON run config')
    common.add_argument('--seed', type=int, help='Global seed')
    common.add_argument('--num-classes', '--classes', type=int, dest='num_classes', help='Number of sound classes K')
    common.add_argument('--log-level', dest='log_level', help='Console log level')
    common.add_argument('--set', action='append', metavar='KEY=VALUE',
                        help='Dotted config override, e.g. --set loss.alpha_st=0 (repeatable)')

    gen = sub.add_parser('gen-data', parents=[common], help='Write the synthetic corpus')
    gen.add_argument('--out', help='Output directory')
    gen.add_argument('--composites', action='store_true', help='Also write composite WAVs')

    train = sub.add_parser('train', parents=[common], help='Two-stage post-training')
    train.add_argument('--out', help='Output directory')
    train.add_argument('--stages', choices=['AB', 'B'])
    train.add_argument('--epochs-a', type=int, dest='epochs_a')
    train.add_argument('--epochs-b', type=int, dest='epochs_b')
    train.add_argument('--batch-size', type=int, dest='batch_size')
    train.add_argument('--lr', type=float)

    ev = sub.add_parser('eval', parents=[common], help='Zero-shot temporal evaluation')
    ev.add_argument('--checkpoint', '--ckpt', dest='checkpoint', help='Checkpoint .npz (model=checkpoint)')
    ev.add_argument('--model', choices=['checkpoint', 'oracle', 'random'], default='checkpoint')
    ev.add_argument('--report', help='JSON report path; a CSV is written next to it')
    ev.add_argument('--tasks', type=_task_list, nargs='+', help='Subset of tasks 1..5: "1,3" or "1 3"')
    ev.add_argument('--max-pairs', type=int, dest='max_pairs', help='Subsample held-out pairs')

    gc = sub.add_parser('grad-check', parents=[common], help='Analytic vs finite-difference gradients')
    gc.add_argument('--corrupt', type=float, default=0.0, help='Perturb the analytic gradient')
    gc.add_argument('--coords', type=int, default=20, help='Probed coordinates per configuration')
    gc.add_argument('--step', type=float, default=1e-6, help='Finite-difference step')
    gc.add_argument('--tolerance', type=float, default=1e-5)
    gc.add_argument('--out', help='JSON results path')

    sw = sub.add_parser('sweep', parents=[common], help='Coefficient ablation grid')
    sw.add_argument('--out', default='sweep.csv', help='Aggregated CSV path')
    sw.add_argument('--seeds', type=int, default=3)
    sw.add_argument('--jobs', type=int, default=1)

    schema = sub.add_parser('schema', help='Write the run-config JSON schema')
    schema.add_argument('--out', default='config/run_config.schema.json')

    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted-key overrides from flags; --set comes first so dedicated flags win"""
    overrides = _parse_set(getattr(args, 'set', None))
    flags = {
        'seed': 'seed',
        'num_classes': 'corpus.num_classes',
        'stages': 'train.stages',
        'epochs_a': 'train.epochs_a',
        'epochs_b': 'train.epochs_b',
        'batch_size': 'train.batch_size',
        'lr': 'train.learning_rate',
        'tasks': 'eval.tasks',
        'max_pairs': 'eval.max_pairs',
    }
    for attr, key in flags.items():
        value = getattr(args, attr, None)
        if attr == 'tasks' and value is not None:
            value = [task for group in value for task in group]
        if value is not None:
            overrides[key] = value
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)

    if args.command == 'schema':
        try:
            write_schema(args.out)
        except LabError as e:
            print(f"ERROR: {e}")
            return exit_code_for(e)
        print(f"✓ Schema written to {args.out}")
        return EXIT_OK

    try:
        overrides = collect_overrides(args)
    except ConfigError as e:
        print(f"ERROR: {e}")
        return EXIT_CONFIG

    orchestrator = TemporalLabOrchestrator(args.config, overrides, args.log_level)
    try:
        if not orchestrator.load_config():
            print(f"ERROR: {orchestrator.last_error}")
            return exit_code_for(orchestrator.last_error)

        if not orchestrator.initialize_agents(args.command):
            print(f"ERROR: {orchestrator.last_error}")
            return exit_code_for(orchestrator.last_error)

        return orchestrator.run(args.command, args)

    except LabError as e:
        print(f"\nERROR: {e}")
        return exit_code_for(e)
    except Exception as e:
        print(f"\nFATAL ERROR: {e}")
        return EXIT_FAILURE

    finally:
        orchestrator.shutdown()


if __name__ == '__main__':
    sys.exit(main())
