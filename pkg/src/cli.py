#!/usr/bin/env python3
import argparse
import sys
from pathlib import Path

from evaluate import evaluate_gradients
from experiment_config import ExperimentConfig, load_config
from experiment_pipeline import ExperimentPipeline


def _load(args) -> ExperimentConfig:
    if not args.config:
        return ExperimentConfig()
    if not Path(args.config).exists():
        raise FileNotFoundError(f"Config file {args.config} does not exist")
    return load_config(args.config)


def main():
    parser = argparse.ArgumentParser(description='Compressed sensing with sparse latents and generative priors')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    # Run command
    run_parser = subparsers.add_parser('run', help='Run the study named in the config')
    run_parser.add_argument('--config', required=True, help='Path to JSON experiment config')
    run_parser.add_argument('--workers', type=int, help='Number of worker processes')
    run_parser.add_argument('--out', help='Output directory (overrides config and GSL_OUTPUT_DIR)')

    # NNLM command
    nnlm_parser = subparsers.add_parser('nnlm', help='Measure non-linearity versus training size')
    nnlm_parser.add_argument('--config', required=True, help='Path to JSON experiment config')
    nnlm_parser.add_argument('--workers', type=int, help='Number of worker threads')
    nnlm_parser.add_argument('--out', help='Output directory')

    # Showcase command
    showcase_parser = subparsers.add_parser('showcase', help='Trace a single reconstruction')
    showcase_parser.add_argument('--config', help='Path to JSON experiment config')
    showcase_parser.add_argument('--alpha', type=float, help='Measurement ratio n/m')
    showcase_parser.add_argument('--lambda', dest='lam', type=float, help='Residual weight in [0, 1]')
    showcase_parser.add_argument('--out', help='Output directory')

    # Gradient check command
    grad_parser = subparsers.add_parser('gradcheck', help='Check loss gradients against finite differences')
    grad_parser.add_argument('--dim', type=int, default=8, help='Signal and latent dimension')
    grad_parser.add_argument('--seed', type=int, default=0, help='Root seed')

    # Stats command
    stats_parser = subparsers.add_parser('stats', help='Show configuration and output statistics')
    stats_parser.add_argument('--config', help='Path to JSON experiment config')

    # Clear command
    clear_parser = subparsers.add_parser('clear', help='Remove generated CSV and SVG files')
    clear_parser.add_argument('--config', help='Path to JSON experiment config')
    clear_parser.add_argument('--out', help='Output directory')

    args = parser.parse_args()

    if not args.command:
        parser.print_help()
        return

    try:
        if args.command == 'gradcheck':
            results = evaluate_gradients(dim=args.dim, seed=args.seed)
            print("\n" + "="*70)
            print("GRADIENT CHECK:")
            print("="*70)
            for r in results:
                mark = "✓" if r['passed'] else "✗"
                print(f"{mark} {r['model']:<22} {r['penalty']:<14} rel error {r['rel_error']:.2e}")
            print("="*70)
            if not all(r['passed'] for r in results):
                print("Error: analytic and numerical gradients disagree")
                sys.exit(1)
            return

        config = _load(args)
        pipeline = ExperimentPipeline(
            config,
            output_dir=getattr(args, 'out', None),
            workers=getattr(args, 'workers', None),
        )

        if args.command == 'run':
            pipeline.run()

        elif args.command == 'nnlm':
            pipeline.run_nnlm()

        elif args.command == 'showcase':
            pipeline.run_showcase(alpha=args.alpha, lam=args.lam)

        elif args.command == 'stats':
            stats = pipeline.get_stats()
            print("\n" + "="*70)
            print("EXPERIMENT STATISTICS:")
            print("="*70)
            print(f"Study: {stats['study']}")
            print(f"Models: {', '.join(stats['models'])}")
            dims = stats['dimensions']
            print(f"Dimensions: m={dims['m']}, M={dims['M']}, K={dims['K']}")
            print(f"SNR: {'noise-free' if stats['snr_db'] is None else str(stats['snr_db']) + ' dB'}")
            print(f"Grid points: {stats['grid_points']} x {stats['trials']} trials")
            print(f"Workers: {stats['workers']}")
            print(f"Output directory: {stats['store']['output_dir']}")
            print(f"Files in output directory: {stats['store']['count']}")
            print("="*70)

        elif args.command == 'clear':
            print(f"Clearing generated files from {pipeline.store.output_dir}...")
            removed = pipeline.store.clear()
            print(f"✓ Removed {len(removed)} file(s)")

    except Exception as e:
        print(f"Error: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
