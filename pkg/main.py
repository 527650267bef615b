# main.py

from app.cli import cli


def main():
    """
    Entry point for the patent valuation pipeline.
    """
    cli(prog_name="patent-valuation")


if __name__ == "__main__":
    main()
