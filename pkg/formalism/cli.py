"""Programmatic entry point: ``run(argv)`` returns the process exit code."""
import os
import sys

import django
from django.core.management import call_command
from django.core.management.base import CommandError


def run(argv=None, stdout=None, stderr=None):
    """
    Run one ``thermo`` subcommand.

    Args:
        argv: arguments after the command name, e.g. ['validate', 'model.json']
        stdout, stderr: streams for output and the summary line

    Returns:
        0 on success, 1 for input errors, 2 for numerical failures
    """
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'thermoweaver.settings')
    django.setup()
    argv = list(sys.argv[1:] if argv is None else argv)
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        call_command('thermo', *argv, stdout=stdout, stderr=stderr)
    except CommandError as exc:
        stderr.write(f"{exc}\n")
        return exc.returncode
    return 0


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
