"""Disparity-adaptive sliding window object proposals.

Submodules: ``camera`` and ``sizelut`` map disparity to box size, ``theory``
and ``baseline`` model exhaustive search, ``proposer`` runs the adaptive scan,
``dataset`` and ``metrics`` handle KITTI-style data and recall evaluation.
"""

__version__ = "0.1.0"
