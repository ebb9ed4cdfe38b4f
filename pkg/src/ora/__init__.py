"""ora: an engine that drives a language-model backend through tree-structured
research rounds over a persistent, diversity-aware solution database.

Subsystems:
  canvas     problem specification and run configuration
  soldb      persistent solution database (cells, elites, parent sampling)
  flowgraph  per-round research tree (selection, truncation, rendering)
  modelgate  chat-completion backends and the global budget ledger
  agents     idea generation, code synthesis, round orchestration
  explab     sandboxed evaluation, patching, experiment refinement loop
  reflect    progressive summaries, long-term reflection, compression
  scorelab   driving-style scoring, behavioral signatures, benchmark reports
  cli        command-line entry point
"""

__version__ = "0.1.0"
