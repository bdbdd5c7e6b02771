"""Allow running churn_compass as a module: python -m churn_compass"""

from .cli import cli

if __name__ == '__main__':
    cli()
