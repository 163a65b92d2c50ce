"""Entry point for python -m fatcc_sim."""

from .cli import main

if __name__ == "__main__":
    main()
