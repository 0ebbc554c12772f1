"""Isotropy-regularized supervised pre-training for few-shot intent detection.

Modules: ``numcore`` (autodiff tensors), ``geometry`` (isotropy, whitening),
``model`` (bag-of-embeddings encoder), ``objectives`` (CE, CL-Reg, Cor-Reg and
friends), ``training``, ``fewshot`` (episodic evaluation), ``data`` and ``cli``.
"""
__version__ = "0.1.0"
