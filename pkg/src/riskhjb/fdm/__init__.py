"""High-order finite-difference solver for the desirability and risk PDEs."""

from .grid import BOUNDARY, EXCLUDED, INTERIOR, Grid
from .operator import Generator, RiskOperator, assemble_generator, assemble_risk_generator
from .residual import hjb_residual
from .solver import (FieldSeries, GridField, HJBSolution, RiskSolution, solve_linearized_hjb,
                     solve_risk_pde)
from .stencils import StencilSet, build_stencils, fd_weights, upwind_operators
from .stepper import LinearODE, TrapezoidIntegrator, implicit_step

__all__ = [
    "BOUNDARY", "EXCLUDED", "INTERIOR", "Grid", "Generator", "assemble_generator",
    "assemble_risk_generator", "RiskOperator", "hjb_residual", "upwind_operators", "FieldSeries", "GridField", "HJBSolution", "RiskSolution",
    "solve_linearized_hjb", "solve_risk_pde", "StencilSet", "build_stencils", "fd_weights",
    "LinearODE", "TrapezoidIntegrator", "implicit_step",
]
