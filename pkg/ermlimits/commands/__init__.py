from .bound import cmd_bound
from .solve import cmd_solve
from .design import cmd_design_loss
from .simulate import cmd_simulate
from .reproduce import cmd_reproduce, ReproduceTarget
from .context import RunContext

COMMANDS = {
    "bound": cmd_bound,
    "solve": cmd_solve,
    "design-loss": cmd_design_loss,
    "simulate": cmd_simulate,
    "reproduce": cmd_reproduce,
}
