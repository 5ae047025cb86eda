"""medrec: DDI-aware medication recommendation.

Library layout:
  numcore   - tensor autodiff, Adam, finite-difference gradient checks
  ehrdata   - visit records, JSONL dataset IO, NDC->ATC3 mapping, synthetic generator
  ddigraph  - interaction / co-prescription graphs and DDI-rate metric
  model     - the recommendation network and checkpoint format
  traineval - training loop and evaluation metrics
  report    - ablation tables, CSV output, matplotlib figures
  serveapi  - HTTP inference service
  cli       - the `medrec` command
"""

__version__ = "0.1.0"
