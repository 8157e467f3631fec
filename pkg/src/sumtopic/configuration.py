"""Configuration classes for datasets, providers, the topic pipeline and the grid.

Defines the configuration classes :class:`DatasetConfig`, :class:`SummarizerConfig`,
:class:`EmbedderConfig`, :class:`GridConfig` and :class:`OutputConfig`. The
:func:`loadConfig` function reads a YAML or JSON file and returns a :class:`Config`
object, a NamedTuple of these sections plus the :class:`~sumtopic.reduce.UmapParams`
section (see ``docs/source/config.rst`` for every key).
"""
from __future__ import annotations
import json
import logging
from pathlib import Path
from typing import Literal, NamedTuple, Optional

from ruamel.yaml import YAML

from sumtopic.reduce import UmapParams

__all__ = [
    "InputType",
    "INPUT_TYPES",
    "getDictFromFile",
    "DatasetConfig",
    "SummarizerConfig",
    "EmbedderConfig",
    "GridConfig",
    "OutputConfig",
    "Config",
    "default_min_topic_sizes",
    "loadConfig",
]

InputType = Literal["full", "short", "long"]
"""Which text the topic model is fit on: the original documents (``'full'``), the
20-30 word summaries (``'short'``) or the 60-80 word summaries (``'long'``).
"""

INPUT_TYPES: tuple[InputType, ...] = ("full", "short", "long")


def getDictFromFile(filepath: str | Path) -> dict[str]:
    """Reads a YAML or JSON file and returns the contents as a dictionary.

    Args:
        filepath (str | Path): The YAML or JSON file to interpret.

    Raises:
        ValueError: If the extension in the filename is not one of ".yaml", ".yml", or
          ".json".

    Returns:
        dict[str]: The contents of the file in dictionary form.
    """
    log = logging.getLogger("sumtopic.main")

    if isinstance(filepath, str):
        filepath = Path(filepath)

    ext = filepath.suffix
    if ext == ".json":
        load = json.load
    elif ext in [".yaml", ".yml"]:
        yaml = YAML(typ="safe", pure=True)
        load = yaml.load
    else:
        raise ValueError(
            f"Invalid file extension for config file: {ext}\n"
            "Please use .yaml or .json."
        )

    log.info("Loading configuration from %s", str(filepath))

    with open(filepath, "r", encoding="utf-8") as f:
        config_dict = dict(load(f) or {})
        log.debug("Loaded configuration: %s", str(config_dict))

    return config_dict


class DatasetConfig(NamedTuple):
    """Where and how to read the original corpus.

    Args:
        name (str): Dataset name used in reports and as the id prefix.
        path (str): JSONL file, CSV file or directory of text files.
        format (str): ``'jsonl'``, ``'csv'`` or ``'dir'``.
        text_field (str): Record key holding the text. Defaults to ``"text"``.
        label_field (str, optional): Record key holding the label.
    """

    name: str
    path: str
    format: str = "jsonl"
    text_field: str = "text"
    label_field: Optional[str] = "label"

    def keys(self):
        return self._fields

    def __getitem__(self, key: str):
        return getattr(self, key)


class SummarizerConfig(NamedTuple):
    """Settings for the completion provider and summary generation.

    Args:
        provider (str): ``'http'`` for a completion endpoint or ``'extractive'`` for
          the offline fallback.
        base_url (str): Root URL of the completion service.
        endpoint_path (str): Path appended to ``base_url``.
        model (str): Model name sent with each request.
        temperature (float): Sampling temperature. Defaults to 0.
        max_tokens (int): Maximum completion length. Defaults to 160.
        api_key_env (str): Name of the environment variable holding the API key.
        auth_header (str): Header carrying the key. Defaults to ``"Authorization"``.
        auth_scheme (str): Prefix placed before the key in ``auth_header``.
        response_field (str): Dotted path of the completion text in the response.
        timeout (float): Per-request timeout in seconds.
        max_attempts (int): Attempts before a transport failure is surfaced.
        backoff_seconds (float): Base delay of the exponential backoff.
        truncation_limit (int): Word limit applied to documents before prompting.
        concurrency_limit (int): Parallel provider calls in ``summarize_corpus``.
        template_path (str, optional): Prompt template file; the packaged default is
          used when unset.
    """

    provider: str = "http"
    base_url: str = "https://api.openai.com"
    endpoint_path: str = "/v1/completions"
    model: str = "gpt-3.5-turbo-instruct"
    temperature: float = 0.0
    max_tokens: int = 160
    api_key_env: str = "OPENAI_API_KEY"
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"
    response_field: str = "choices.0.text"
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_seconds: float = 1.0
    truncation_limit: int = 2800
    concurrency_limit: int = 4
    template_path: Optional[str] = None

    def keys(self):
        return self._fields

    def __getitem__(self, key: str):
        return getattr(self, key)


class EmbedderConfig(NamedTuple):
    """Settings for the embedding provider.

    Args:
        provider (str): ``'hashing'`` for the offline fallback or ``'http'``.
        dim (int): Output dimension of the hashing provider. Defaults to 256.
        seed (int): Projection seed of the hashing provider. Defaults to 42.
        batch_size (int): Texts per provider call.
        concurrency_limit (int): Parallel batches. Defaults to 2.
        base_url, endpoint_path, model, api_key_env, auth_header, auth_scheme,
          timeout, max_attempts, backoff_seconds: As for :class:`SummarizerConfig`,
          used by the HTTP provider.
    """

    provider: str = "hashing"
    dim: int = 256
    seed: int = 42
    batch_size: int = 64
    concurrency_limit: int = 2
    base_url: str = "https://api.openai.com"
    endpoint_path: str = "/v1/embeddings"
    model: str = "text-embedding-3-small"
    api_key_env: str = "OPENAI_API_KEY"
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_seconds: float = 1.0

    def keys(self):
        return self._fields

    def __getitem__(self, key: str):
        return getattr(self, key)


class GridConfig(NamedTuple):
    """The experiment grid: every combination of input type, MMR diversity and
    minimum topic size is fit ``repeats`` times with seeds ``base_seed + r``.

    Args:
        dataset_name (str): Name written into every record. Defaults to the dataset
          section's name.
        diversity_values (tuple[float, ...]): MMR diversity weights.
        min_topic_sizes (tuple[int, ...]): HDBSCAN minimum cluster sizes.
        input_types (tuple[InputType, ...]): Which inputs to model.
        repeats (int): Runs per combination. Defaults to 3.
        base_seed (int): Seed of the first repeat.
        min_samples (int, optional): HDBSCAN ``min_samples``; defaults to the
          minimum topic size of each cell.
        n_candidates (int): c-TF-IDF candidate pool size before MMR.
        top_k (int): Keywords per topic.
        window_size (int): Boolean sliding window size for C_V.
        workers (int): Cells executed in parallel.
    """

    dataset_name: str = ""
    diversity_values: tuple[float, ...] = (0.1, 0.2, 0.3)
    min_topic_sizes: tuple[int, ...] = ()
    input_types: tuple[InputType, ...] = INPUT_TYPES
    repeats: int = 3
    base_seed: int = 0
    min_samples: Optional[int] = None
    n_candidates: int = 30
    top_k: int = 10
    window_size: int = 110
    workers: int = 1

    def keys(self):
        return self._fields

    def __getitem__(self, key: str):
        return getattr(self, key)

    def validate(self) -> GridConfig:
        """Checks the grid invariants and returns ``self``.

        Raises:
            ValueError: On an empty axis, ``repeats < 1``, a diversity value outside
              ``[0, 1]``, an unknown input type or a minimum topic size below 2.
        """
        if self.repeats < 1:
            raise ValueError(f"grid.repeats must be at least 1, got {self.repeats}")
        if not self.diversity_values or not self.min_topic_sizes or not self.input_types:
            raise ValueError("grid axes must not be empty")
        for d in self.diversity_values:
            if not 0.0 <= d <= 1.0:
                raise ValueError(f"grid.diversity_values must lie in [0, 1], got {d}")
        for t in self.input_types:
            if t not in INPUT_TYPES:
                raise ValueError(f"Unknown input type '{t}'; use one of {INPUT_TYPES}")
        for m in self.min_topic_sizes:
            if m < 2:
                raise ValueError(f"grid.min_topic_sizes must be at least 2, got {m}")
        return self


class OutputConfig(NamedTuple):
    """Directories for results and caches.

    Args:
        out_dir (str): Where grid results and reports are written.
        cache_dir (str): Root of the summary cache.
        work_dir (str): Where derived corpora and embeddings are stored.
    """

    out_dir: str = "results"
    cache_dir: str = ".sumtopic/cache"
    work_dir: str = ".sumtopic/work"

    def keys(self):
        return self._fields

    def __getitem__(self, key: str):
        return getattr(self, key)


class Config(NamedTuple):
    """A NamedTuple of every configuration section.

    Args:
        dataset (DatasetConfig): The original corpus.
        summarizer (SummarizerConfig): Completion provider and summary settings.
        embedder (EmbedderConfig): Embedding provider settings.
        umap (UmapParams): UMAP settings; the seed is replaced per run.
        grid (GridConfig): The experiment grid.
        output (OutputConfig): Output and cache directories.
    """

    dataset: DatasetConfig
    summarizer: SummarizerConfig
    embedder: EmbedderConfig
    umap: UmapParams
    grid: GridConfig
    output: OutputConfig


_SECTIONS = {
    "dataset": DatasetConfig,
    "summarizer": SummarizerConfig,
    "embedder": EmbedderConfig,
    "umap": UmapParams,
    "grid": GridConfig,
    "output": OutputConfig,
}


def _section(cls: type, name: str, settings: Optional[dict]) -> NamedTuple:
    settings = dict(settings or {})
    for key in settings:
        if key not in cls._fields:
            raise ValueError(f"Unknown key '{key}' in section '{name}'")
    for key, value in settings.items():
        if isinstance(value, list):
            settings[key] = tuple(value)
    return cls(**settings)


def default_min_topic_sizes(n_documents: int) -> tuple[int, ...]:
    """Minimum topic sizes used when the grid does not configure any:
    ``(10, 15, 20)`` for corpora of a few thousand documents and ``(50, 100, 150)``
    for larger ones.
    """
    return (10, 15, 20) if n_documents < 5000 else (50, 100, 150)


def loadConfig(filename: str | Path) -> Config:
    """Get configuration settings from a YAML or JSON file.

    Args:
        filename (str | Path): Path to a YAML or JSON file.

    Raises:
        ValueError: If a section or key is unknown (the offending name is given), or
          the ``dataset`` section is missing.

    Returns:
        :class:`Config`: Settings read from the config file.
    """
    config_dict = getDictFromFile(filename)

    for name in config_dict:
        if name not in _SECTIONS:
            raise ValueError(f"Unknown config section '{name}'")
    if "dataset" not in config_dict:
        raise ValueError("Config file has no 'dataset' section")

    dataset = _section(DatasetConfig, "dataset", config_dict["dataset"])
    summarizer = _section(SummarizerConfig, "summarizer", config_dict.get("summarizer"))
    embedder = _section(EmbedderConfig, "embedder", config_dict.get("embedder"))
    umap = _section(UmapParams, "umap", config_dict.get("umap"))
    grid = _section(GridConfig, "grid", config_dict.get("grid"))
    output = _section(OutputConfig, "output", config_dict.get("output"))

    if not grid.dataset_name:
        grid = grid._replace(dataset_name=dataset.name)

    return Config(dataset, summarizer, embedder, umap, grid, output)
