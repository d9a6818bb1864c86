"""
Strap Tying MPC

Desk-scale rope simulator and turn-taking multi-agent model predictive control
for fastening a strap onto a rotating hook bar, guided by a learned keypoint
dynamics model and a learned linking-number cost.
"""

__version__ = "1.0.0"
__author__ = "Strap Tying MPC Team"
__email__ = "team@example.com"

# Package metadata
__title__ = "strap-tying-mpc"
__description__ = "Turn-taking multi-agent MPC for strap tying with learned keypoint dynamics"
__url__ = "https://github.com/example/strap-tying-mpc"
__license__ = "MIT"
