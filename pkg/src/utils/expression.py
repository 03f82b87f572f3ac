"""
A small arithmetic grammar for densities f(s, phi).

    expr    := term (('+' | '-' | '−') term)*
    term    := factor (('*' | '/' | '×' | '÷') factor)*
    factor  := ['-' | '−'] atom ('^' factor)?
    atom    := number | 'pi' | 's' | 'phi' | 'ell'
             | 'const' '(' expr ')'
             | ('sin' | 'cos' | 'exp' | 'sqrt' | 'log') '(' expr ')'
             | 'pow' '(' expr ',' expr ')'
             | '(' expr ')'

`ell` is the cap support function 1 - cos(theta) cos(s), so rigidity
densities such as 2 * pow(ell, -3) are represented exactly.
"""

import logging
import operator
from typing import Any, Callable, Dict

import numpy as np
import pyparsing as pp

from src.core.exceptions import ConfigError
from src.models.fields import CapGrid, ScalarField

logger = logging.getLogger(__name__)

Evaluator = Callable[[Dict[str, np.ndarray]], np.ndarray]

_FUNCTIONS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "log": np.log,
    "const": lambda x: x,
}
_BINARY = {
    "+": operator.add,
    "-": operator.sub,
    "−": operator.sub,
    "*": operator.mul,
    "×": operator.mul,
    "/": operator.truediv,
    "÷": operator.truediv,
}
_VARIABLES = ("s", "phi", "ell")


def _number(tokens) -> Evaluator:
    value = float(tokens[0])
    return lambda env: value


def _variable(tokens) -> Evaluator:
    name = tokens[0]
    if name == "pi":
        return lambda env: np.pi
    return lambda env: env[name]


def _call(tokens) -> Evaluator:
    name, *args = tokens[0]
    if name == "pow":
        base, exponent = args
        return lambda env: np.power(base(env), exponent(env))
    fn = _FUNCTIONS[name]
    (arg,) = args
    return lambda env: fn(arg(env))


def _unary(tokens) -> Evaluator:
    _, operand = tokens[0]
    return lambda env: -operand(env)


def _power(tokens) -> Evaluator:
    operands = tokens[0][::2]

    def evaluate(env):
        result = operands[-1](env)
        for base in reversed(operands[:-1]):
            result = np.power(base(env), result)
        return result

    return evaluate


def _left_assoc(tokens) -> Evaluator:
    items = tokens[0]
    first = items[0]
    pairs = [(_BINARY[items[i]], items[i + 1]) for i in range(1, len(items), 2)]

    def evaluate(env):
        result = first(env)
        for op, operand in pairs:
            result = op(result, operand(env))
        return result

    return evaluate


def _build_grammar() -> pp.ParserElement:
    expr = pp.Forward()
    number = pp.common.number.copy().set_parse_action(_number)
    keyword = pp.one_of("pi " + " ".join(_VARIABLES), as_keyword=True)
    variable = keyword.copy().set_parse_action(_variable)
    lpar, rpar, comma = map(pp.Suppress, "(),")
    unary_call = pp.Group(
        pp.one_of(" ".join(_FUNCTIONS), as_keyword=True) + lpar + expr + rpar
    )
    binary_call = pp.Group(pp.Keyword("pow") + lpar + expr + comma + expr + rpar)
    call = (binary_call | unary_call).set_parse_action(_call)
    atom = call | number | variable | (lpar + expr + rpar)

    expr <<= pp.infix_notation(
        atom,
        [
            ("^", 2, pp.OpAssoc.RIGHT, _power),
            (pp.one_of("- −"), 1, pp.OpAssoc.RIGHT, _unary),
            (pp.one_of("* / × ÷"), 2, pp.OpAssoc.LEFT, _left_assoc),
            (pp.one_of("+ - −"), 2, pp.OpAssoc.LEFT, _left_assoc),
        ],
    )
    return expr


_GRAMMAR = _build_grammar()


def parse_expression(text: str) -> Evaluator:
    """Compile `text` into a function of the variable environment."""
    try:
        result = _GRAMMAR.parse_string(text, parse_all=True)
    except pp.ParseBaseException as exc:
        raise ConfigError(f"cannot parse density expression {text!r}: {exc}") from exc
    return result[0]


def evaluate_on_grid(text: str, grid: CapGrid) -> ScalarField:
    """Evaluate a density expression at every node of the grid."""
    evaluator = parse_expression(text)
    s = grid.s_nodes
    env: Dict[str, Any] = {
        "s": s,
        "phi": grid.phi_nodes,
        "ell": 1.0 - np.cos(grid.theta) * np.cos(s),
    }
    with np.errstate(all="ignore"):
        values = np.broadcast_to(np.asarray(evaluator(env), dtype=float), (grid.size,)).copy()
    if not np.all(np.isfinite(values)):
        raise ConfigError(f"density expression {text!r} is not finite on the grid")
    logger.debug("Density expression %r: min %.6g max %.6g", text, values.min(), values.max())
    return ScalarField(grid, values)
