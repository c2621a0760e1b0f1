"""Online coupon collection and lifelong RL over a finite family of MDPs."""

__version__ = "0.1.0"
