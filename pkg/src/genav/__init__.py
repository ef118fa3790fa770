"""Multi-turn generation navigator: simulated environment, trajectory reward,
group-relative policy training, trajectory construction, contamination audit."""

__version__ = "0.1.0"
