"""motionsrc - full-body motion synthesis from sparse head/hand tracking."""

VERSION = "0.4.0"

# Frame rate used for every velocity, jerk and file header in the package.
FPS = 60
