import sys
from pathlib import Path
from typing import NoReturn


def get_user_confirmation(prompt: str = "Continue? (y/n) ") -> None | NoReturn:
    """Prompts the user for a confirmation or denial."""
    while True:
        user_input = input(prompt).strip().lower()
        if user_input == "y":
            return None
        elif user_input == "n":
            print("Cancelled by user")
            sys.exit(0)
        else:
            print("Please enter 'y' for yes or 'n' for no.")


def confirm_overwrite(directory: Path, assume_yes: bool = False) -> None:
    """Ask before writing into a directory that already has content."""
    if assume_yes or not directory.exists() or not any(directory.iterdir()):
        return
    print(f"Output directory {directory} is not empty, existing files may be overwritten.")
    get_user_confirmation()
