# SPDX-License-Identifier: Apache-2.0

from pydantic import BaseModel, Field, field_validator


class baseFunctionArgs(BaseModel):
    """Base class for all benchmark function arguments; holds the input dimension."""

    dimension: int = Field(ge=2, description='Number d of input variables')


class HenonHeilesArgs(baseFunctionArgs):
    dimension: int = Field(default=8, ge=2, description='Number d of input variables')
    sigma: float = Field(default=0.2, description='Coupling constant sigma* of the potential')


class Anisotropic6Args(baseFunctionArgs):
    dimension: int = Field(default=6, description='Fixed at 6 for this function')

    @field_validator('dimension')
    @classmethod
    def _only_six(cls, value: int) -> int:
        if value != 6:
            raise ValueError(f'anisotropic6 is defined in dimension 6 only, got {value}')
        return value


class SumBivariateArgs(baseFunctionArgs):
    dimension: int = Field(
        default=8, ge=2, description='Even number d of variables, paired as (1,2), (3,4), ...'
    )

    @field_validator('dimension')
    @classmethod
    def _even(cls, value: int) -> int:
        if value % 2:
            raise ValueError(f'sum-bivariate needs an even dimension, got {value}')
        return value


class SumTrivariateArgs(baseFunctionArgs):
    dimension: int = Field(
        default=19, ge=4, description='Number d >= 4 of variables, in overlapping triples'
    )
