from mutation_models.evolution import EvolutionConfig

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def short_config(**kwargs) -> EvolutionConfig:
    """Evolution config for runs shorter than the default training interval."""
    kwargs.setdefault("train_interval", max(1, min(100, kwargs.get("generations", 2000))))
    return EvolutionConfig(**kwargs)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
