"""Runs a mixvstat subcommand from a configuration file

    python run_experiment.py indep-test config.toml --seed 7 --threads 4
"""
import sys

from mixvstat.cli import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
