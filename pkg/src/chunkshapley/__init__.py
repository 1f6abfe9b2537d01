"""Coalition-aware attribution and filtering of retrieved code chunks.

Core pieces: a closed-form surrogate coalition game with exact Shapley
attribution (game), completion metrics (metrics), the generator backend
abstraction (generator), corpus hygiene filtering (corpus), sparse chunk
retrieval (retrieval), the offline labeling pipeline (labeler), and the
online retrieval-control loop (inference). An HTTP service (service) and
a CLI (cli) sit on top.
"""

__version__ = "0.1.0"
