from pathlib import Path


def get_project_root():
    """Get the project root directory."""
    # Search for the project root by looking for pyproject.toml in parent directories
    current_dir = Path(__file__).parent
    while current_dir != current_dir.parent:
        if (current_dir / "pyproject.toml").exists():
            return current_dir
        current_dir = current_dir.parent

    # If not found, fallback to current working directory
    return Path.cwd()


def resolve_path(path, base_dir=None) -> Path:
    """Resolve `path` against `base_dir` (default: the project root) unless absolute."""
    path = Path(path)
    if path.is_absolute():
        return path
    base_dir = Path(base_dir) if base_dir is not None else get_project_root()
    return base_dir / path
