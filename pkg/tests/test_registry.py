"""Tests for the experiment registry module."""

import pytest

import sdcpse
from sdcpse import bench
from sdcpse._registry import _ExperimentNamespace, _sanitize_name, experiment, get_runner


class TestSanitizeName:
    """Tests for the _sanitize_name function."""

    def test_hyphenated_name(self):
        """Test that hyphens become underscores."""
        assert _sanitize_name("circle-lb") == "CIRCLE_LB"

    def test_name_starting_with_number(self):
        """Test names starting with numbers get underscore prefix."""
        assert _sanitize_name("3d-bunny") == "_3D_BUNNY"

    def test_empty_name(self):
        """Test empty name returns UNKNOWN."""
        assert _sanitize_name("") == "UNKNOWN"
        assert _sanitize_name(None) == "UNKNOWN"


class TestExperimentNamespace:
    """Tests for the _ExperimentNamespace class."""

    def test_attribute_access(self):
        """Test accessing an experiment returns its command-line name."""
        assert experiment.CIRCLE_LB == "circle-lb"
        assert experiment.BUMP_DIFFUSION == "bump-diffusion"

    def test_case_insensitive_access(self):
        """Test that lowercase attribute names resolve."""
        assert experiment.sphere_poisson == "sphere-poisson"

    def test_unknown_attribute(self):
        """Test that unknown names raise AttributeError."""
        with pytest.raises(AttributeError, match="No experiment named"):
            _ = experiment.TORUS_LB

    def test_private_attribute(self):
        """Test that private names are not looked up."""
        with pytest.raises(AttributeError):
            _ = experiment._hidden

    def test_dir_lists_experiments(self):
        """Test dir() returns the sanitized names."""
        names = dir(experiment)
        assert "ELLIPSOID_CURVATURE" in names
        assert names == sorted(names)

    def test_iteration_yields_names(self):
        """Test iterating gives the command-line names."""
        assert "bunny-curvature" in list(experiment)

    def test_repr(self):
        """Test the representation counts experiments."""
        assert repr(_ExperimentNamespace(["a", "b"])) == "<ExperimentNamespace: 2 experiments>"

    def test_ipython_completions(self):
        """Test IPython bracket completion support."""
        assert experiment._ipython_key_completions_() == dir(experiment)

    def test_exported_from_package(self):
        """Test the namespace is available at the top level."""
        assert sdcpse.experiment is experiment


class TestGetRunner:
    """Tests for get_runner."""

    def test_known_experiments(self):
        """Test that every experiment maps to its driver."""
        assert get_runner("circle-lb") is bench.run_circle_lb
        assert get_runner(experiment.BUMP_DIFFUSION) is bench.run_bump_diffusion

    def test_every_experiment_has_runner(self):
        """Test that the namespace and the dispatch table agree."""
        for name in experiment:
            assert callable(get_runner(name))

    def test_unknown_experiment(self):
        """Test that an unknown name raises ValueError."""
        with pytest.raises(ValueError, match="unknown experiment"):
            get_runner("torus-lb")
