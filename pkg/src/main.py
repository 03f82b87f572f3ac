"""Entry point of the capsolve command line."""

from dotenv import load_dotenv

from src.cli.app import app

load_dotenv()


def main() -> None:
    app()


if __name__ == "__main__":
    main()
