from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from src.common.exceptions import InvalidBelief, PomdpParseError
from src.model.pomdp_model import Belief, PomdpModel, uniform_belief

_SECTIONS = {"discount", "values", "states", "actions", "observations", "start", "T", "O", "R"}
_ROW_TOLERANCE = 1e-6
_RENORMALIZE_ABOVE = 1e-12


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def _tokenize(text: str) -> List[Tuple[str, int]]:
    """Split the file into (token, line) pairs; ':' is always its own token."""
    tokens = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0]
        for token in content.replace(":", " : ").split():
            tokens.append((token, line_number))
    return tokens


class PomdpParser:
    """Reader for the Cassandra `.pomdp` text format.

    Supports named and indexed states/actions/observations, the ``*`` wildcard,
    ``uniform``/``identity`` shorthands and full-matrix blocks. Rewards in the
    general ``R: a : s : s' : o`` form are reduced to R(s,a) by taking their
    expectation under the transition and observation functions.
    """

    def __init__(self):
        self.tokens: List[Tuple[str, int]] = []
        self.position = 0
        self.discount: Optional[float] = None
        self.reward_sign = 1.0
        self.states: List[str] = []
        self.actions: List[str] = []
        self.observations: List[str] = []
        self.start: Optional[np.ndarray] = None
        self.transition = None
        self.observation_fn = None
        self.reward = None

    def parse(self, text: str, horizon: int = 1, name: str = "pomdp") -> PomdpModel:
        """Parse `.pomdp` text into a validated model."""
        self.__init__()
        self.tokens = _tokenize(text)

        while not self._at_end():
            token, line = self._next()
            if token in ("discount", "values", "states", "actions", "observations"):
                self._expect(":")
                self._parse_preamble_entry(token, line)
            elif token == "start":
                self._parse_start()
            elif token in ("T", "O", "R"):
                self._require_dimensions(token, line)
                self._expect(":")
                if token == "T":
                    self._parse_transition()
                elif token == "O":
                    self._parse_observation()
                else:
                    self._parse_reward()
            else:
                raise PomdpParseError(f"unexpected token {token!r}", line)

        if self.transition is None:
            raise PomdpParseError("file declares no states, actions and observations")

        transition = self._normalize_rows(self.transition, "transition", self.states)
        observation_fn = self._normalize_rows(self.observation_fn, "observation", self.states)
        reward = self.reward_sign * self._marginalize_reward(transition, observation_fn)

        if self.discount is not None and self.discount != 1.0:
            logger.info(f"Ignoring discount {self.discount} from {name}; solving the undiscounted problem")

        try:
            start = uniform_belief(len(self.states)) if self.start is None else Belief(self.start)
        except InvalidBelief as e:
            raise PomdpParseError(f"invalid start distribution: {e}") from e

        model = PomdpModel(
            states=list(self.states),
            actions=list(self.actions),
            observations=list(self.observations),
            transition=transition,
            observation_fn=observation_fn,
            reward=reward,
            initial_belief=start,
            horizon=horizon,
            name=name,
            file_discount=self.discount,
        )
        logger.debug(f"Parsed {name}: |S|={model.num_states}, |A|={model.num_actions}, |O|={model.num_observations}")
        return model

    # Token cursor

    def _at_end(self) -> bool:
        return self.position >= len(self.tokens)

    def _peek(self) -> Optional[str]:
        return None if self._at_end() else self.tokens[self.position][0]

    def _peek_at(self, offset: int) -> Optional[str]:
        index = self.position + offset
        return self.tokens[index][0] if index < len(self.tokens) else None

    def _line(self) -> Optional[int]:
        if self._at_end():
            return self.tokens[-1][1] if self.tokens else None
        return self.tokens[self.position][1]

    def _next(self) -> Tuple[str, int]:
        if self._at_end():
            raise PomdpParseError("unexpected end of file", self._line())
        token = self.tokens[self.position]
        self.position += 1
        return token

    def _expect(self, expected: str):
        token, line = self._next()
        if token != expected:
            raise PomdpParseError(f"expected {expected!r}, found {token!r}", line)

    def _at_section_start(self) -> bool:
        token = self._peek()
        if token not in _SECTIONS:
            return False
        follower = self._peek_at(1)
        return follower == ":" or (token == "start" and follower in ("include", "exclude"))

    def _read_numbers(self, count: int) -> np.ndarray:
        values = np.empty(count)
        for i in range(count):
            token, line = self._next()
            if not _is_number(token):
                raise PomdpParseError(f"expected a number, found {token!r}", line)
            values[i] = float(token)
        return values

    # Preamble

    def _parse_preamble_entry(self, keyword: str, line: int):
        if keyword == "discount":
            self.discount = float(self._read_numbers(1)[0])
        elif keyword == "values":
            token, value_line = self._next()
            if token not in ("reward", "cost"):
                raise PomdpParseError(f"values must be 'reward' or 'cost', found {token!r}", value_line)
            self.reward_sign = 1.0 if token == "reward" else -1.0
        else:
            names = []
            while not self._at_end() and not self._at_section_start():
                names.append(self._next()[0])
            if not names:
                raise PomdpParseError(f"{keyword} list is empty", line)
            if len(names) == 1 and names[0].isdigit():
                names = [str(i) for i in range(int(names[0]))]
            if len(set(names)) != len(names):
                raise PomdpParseError(f"duplicate names in {keyword}", line)
            setattr(self, keyword, names)
            self._maybe_allocate()

    def _maybe_allocate(self):
        if self.states and self.actions and self.observations and self.transition is None:
            n_s, n_a, n_o = len(self.states), len(self.actions), len(self.observations)
            self.transition = np.zeros((n_a, n_s, n_s))
            self.observation_fn = np.zeros((n_a, n_s, n_o))
            self.reward = np.zeros((n_a, n_s, n_s, n_o))

    def _require_dimensions(self, keyword: str, line: int):
        if self.transition is None:
            raise PomdpParseError(f"{keyword}: appears before states, actions and observations", line)

    def _parse_start(self):
        mode = None
        if self._peek() in ("include", "exclude"):
            mode = self._next()[0]
        self._expect(":")
        if not self.states:
            raise PomdpParseError("start: appears before states", self._line())
        n_s = len(self.states)

        if mode is not None:
            listed = set()
            while not self._at_end() and not self._at_section_start():
                listed.update(self._resolve(self._next(), self.states, "state"))
            chosen = sorted(listed) if mode == "include" else [s for s in range(n_s) if s not in listed]
            if not chosen:
                raise PomdpParseError(f"start {mode} leaves no states", self._line())
            start = np.zeros(n_s)
            start[chosen] = 1.0 / len(chosen)
            self.start = start
            return

        token = self._peek()
        if token == "uniform":
            self._next()
            self.start = np.full(n_s, 1.0 / n_s)
        elif token is not None and self._starts_vector(token, n_s):
            self.start = self._read_numbers(n_s)
        else:
            (state,) = self._resolve(self._next(), self.states, "state")
            start = np.zeros(n_s)
            start[state] = 1.0
            self.start = start

    def _starts_vector(self, token: str, num_states: int) -> bool:
        if not _is_number(token):
            return False
        if num_states == 1 or not token.isdigit():
            return True
        follower = self._peek_at(1)
        return follower is not None and _is_number(follower)

    # Model entries

    def _resolve(self, entry: Tuple[str, int], names: Sequence[str], kind: str) -> List[int]:
        token, line = entry
        if token == "*":
            return list(range(len(names)))
        if token in names:
            return [names.index(token)]
        if token.isdigit() and int(token) < len(names):
            return [int(token)]
        raise PomdpParseError(f"unknown {kind} identifier {token!r}", line)

    def _read_specs(self, kinds: Sequence[Tuple[Sequence[str], str]]) -> List[List[int]]:
        """Read up to len(kinds) colon-separated identifiers."""
        specs = [self._resolve(self._next(), *kinds[0])]
        for names, kind in kinds[1:]:
            if self._peek() != ":":
                break
            self._next()
            specs.append(self._resolve(self._next(), names, kind))
        return specs

    def _parse_transition(self):
        n_s = len(self.states)
        specs = self._read_specs([(self.actions, "action"), (self.states, "state"), (self.states, "state")])
        actions = specs[0]
        if len(specs) == 3:
            value = self._read_numbers(1)[0]
            for a in actions:
                self.transition[np.ix_([a], specs[1], specs[2])] = value
        elif len(specs) == 2:
            row = self._read_row_or_uniform(n_s)
            for a in actions:
                for s in specs[1]:
                    self.transition[a, s] = row
        else:
            token = self._peek()
            if token == "identity":
                self._next()
                block = np.eye(n_s)
            elif token == "uniform":
                self._next()
                block = np.full((n_s, n_s), 1.0 / n_s)
            else:
                block = self._read_numbers(n_s * n_s).reshape(n_s, n_s)
            for a in actions:
                self.transition[a] = block

    def _parse_observation(self):
        n_s, n_o = len(self.states), len(self.observations)
        specs = self._read_specs(
            [(self.actions, "action"), (self.states, "state"), (self.observations, "observation")]
        )
        actions = specs[0]
        if len(specs) == 3:
            value = self._read_numbers(1)[0]
            for a in actions:
                self.observation_fn[np.ix_([a], specs[1], specs[2])] = value
        elif len(specs) == 2:
            row = self._read_row_or_uniform(n_o)
            for a in actions:
                for s in specs[1]:
                    self.observation_fn[a, s] = row
        else:
            if self._peek() == "uniform":
                self._next()
                block = np.full((n_s, n_o), 1.0 / n_o)
            else:
                block = self._read_numbers(n_s * n_o).reshape(n_s, n_o)
            for a in actions:
                self.observation_fn[a] = block

    def _parse_reward(self):
        n_s, n_o = len(self.states), len(self.observations)
        specs = self._read_specs([
            (self.actions, "action"),
            (self.states, "state"),
            (self.states, "state"),
            (self.observations, "observation"),
        ])
        if len(specs) < 2:
            raise PomdpParseError("R: entry needs at least an action and a start state", self._line())
        if len(specs) == 4:
            value = self._read_numbers(1)[0]
            self.reward[np.ix_(specs[0], specs[1], specs[2], specs[3])] = value
        elif len(specs) == 3:
            row = self._read_numbers(n_o)
            self.reward[np.ix_(specs[0], specs[1], specs[2], range(n_o))] = row
        else:
            block = self._read_numbers(n_s * n_o).reshape(n_s, n_o)
            self.reward[np.ix_(specs[0], specs[1], range(n_s), range(n_o))] = block

    def _read_row_or_uniform(self, length: int) -> np.ndarray:
        if self._peek() == "uniform":
            self._next()
            return np.full(length, 1.0 / length)
        return self._read_numbers(length)

    # Post-processing

    def _normalize_rows(self, tensor: np.ndarray, label: str, row_names: Sequence[str]) -> np.ndarray:
        tensor = tensor.copy()
        if tensor.min() < 0.0:
            a, s, _ = np.unravel_index(int(np.argmin(tensor)), tensor.shape)
            raise PomdpParseError(f"negative {label} probability in row ({self.actions[a]}, {row_names[s]})")
        sums = tensor.sum(axis=2)
        for a, s in zip(*np.nonzero(np.abs(sums - 1.0) > _RENORMALIZE_ABOVE)):
            total = sums[a, s]
            if abs(total - 1.0) > _ROW_TOLERANCE:
                raise PomdpParseError(
                    f"{label} row ({self.actions[a]}, {row_names[s]}) sums to {total:.9g}, expected 1"
                )
            tensor[a, s] /= total
        return tensor

    def _marginalize_reward(self, transition: np.ndarray, observation_fn: np.ndarray) -> np.ndarray:
        """R(s,a) from R(a,s,s',o); constant blocks are taken verbatim."""
        expected = np.einsum("asy,ayo,asyo->sa", transition, observation_fn, self.reward)
        constant = self.reward.max(axis=(2, 3)) == self.reward.min(axis=(2, 3))
        verbatim = self.reward[:, :, 0, 0]
        return np.where(constant.T, verbatim.T, expected)


def parse_pomdp(text: str, horizon: int = 1, name: str = "pomdp") -> PomdpModel:
    """Parse Cassandra-format text into a PomdpModel."""
    return PomdpParser().parse(text, horizon=horizon, name=name)


def load_pomdp(path: Union[str, Path], horizon: int = 1) -> PomdpModel:
    """Read and parse a `.pomdp` file; the model is named after the file stem."""
    path = Path(path)
    logger.info(f"Loading POMDP from {path}")
    return parse_pomdp(path.read_text(encoding="utf-8"), horizon=horizon, name=path.stem)


def serialize_pomdp(model: PomdpModel) -> str:
    """Canonical Cassandra text for a model.

    Rewards are written in the R(s,a) form and floats with ``repr`` so that
    parsing the output reproduces the tensors bit for bit.
    """
    def names_line(keyword: str, names: List[str]) -> str:
        if names == [str(i) for i in range(len(names))]:
            return f"{keyword}: {len(names)}"
        return f"{keyword}: {' '.join(names)}"

    def row(values: np.ndarray) -> str:
        return " ".join(repr(float(v)) for v in values)

    discount = model.file_discount if model.file_discount is not None else 1.0
    lines = [
        f"discount: {discount!r}",
        "values: reward",
        names_line("states", model.states),
        names_line("actions", model.actions),
        names_line("observations", model.observations),
        f"start: {row(model.initial_belief.probs)}",
        "",
    ]
    for a, action in enumerate(model.actions):
        lines.append(f"T: {action}")
        lines.extend(row(model.transition[a, s]) for s in range(model.num_states))
        lines.append("")
    for a, action in enumerate(model.actions):
        lines.append(f"O: {action}")
        lines.extend(row(model.observation_fn[a, s]) for s in range(model.num_states))
        lines.append("")
    for a, action in enumerate(model.actions):
        for s, state in enumerate(model.states):
            lines.append(f"R: {action} : {state} : * : * {float(model.reward[s, a])!r}")
    return "\n".join(lines) + "\n"
