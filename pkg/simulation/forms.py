import math
from dataclasses import replace

from django import forms
from django.conf import settings
from django.core.exceptions import NON_FIELD_ERRORS, ValidationError
from django.utils.translation import gettext_lazy as _

from control.dynamics import MODEL_CHOICES, InputBounds, ObstacleState, RobotState
from control.stability import Goal
from geometry.fields import SDF_MODE_CHOICES
from geometry.shapes import CIRCLE, POLYGON, PRIMITIVE_KINDS, RECTANGLE, Polygon, Primitive, RobotShape

from .config import ObstacleConfig, OutputsConfig, RobotConfig, ScenarioConfig, SimConfig
from .runner import ControllerParams

NESTED = 'nested'


def validate_positive(value):
    if value is not None and not value > 0:
        raise ValidationError(_("Ensure this value is positive."), code='positive')


def _nested(path, text):
    return ValidationError('%(path)s: %(text)s', code=NESTED, params={'path': path, 'text': text})


def join_path(parent, child):
    if not parent:
        return child
    if not child:
        return parent
    return f"{parent}{child}" if child.startswith('[') else f"{parent}.{child}"


def error_paths(form):
    """Yield ``(key_path, message)`` for every error of ``form``, nested sections included."""
    for name, errors in form.errors.as_data().items():
        for error in errors:
            if name == NON_FIELD_ERRORS:
                yield '', ' '.join(error.messages)
            elif error.code == NESTED:
                yield join_path(name, error.params['path']), str(error.params['text'])
            else:
                yield name, ' '.join(error.messages)


def _number(value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(value)
    value = float(value)  # OverflowError for huge integers
    if not math.isfinite(value):
        raise ValueError(value)
    return value


class VectorField(forms.Field):
    """A JSON pair of finite numbers, cleaned to a tuple of floats."""

    default_error_messages = {
        'invalid': _("Enter a list of two finite numbers."),
    }

    def to_python(self, value):
        if value in self.empty_values:
            return None
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ValidationError(self.error_messages['invalid'], code='invalid')
        try:
            return tuple(_number(component) for component in value)
        except (ValueError, OverflowError):
            raise ValidationError(self.error_messages['invalid'], code='invalid')


class PointListField(VectorField):
    default_error_messages = {
        'invalid': _("Enter a list of at least three points, each a pair of finite numbers."),
    }

    def to_python(self, value):
        if value in self.empty_values:
            return None
        if not isinstance(value, (list, tuple)) or len(value) < 3:
            raise ValidationError(self.error_messages['invalid'], code='invalid')
        points = []
        for point in value:
            vector = super().to_python(point)
            if vector is None:
                raise ValidationError(self.error_messages['invalid'], code='invalid')
            points.append(vector)
        return tuple(points)


class SectionField(forms.Field):
    """A nested JSON object validated by its own ``StrictForm``."""

    default_error_messages = {
        'invalid': _("Expected an object."),
    }

    def __init__(self, form_class, **kwargs):
        self.form_class = form_class
        kwargs.setdefault('required', False)
        super().__init__(**kwargs)

    def clean_section(self, value, path=''):
        if not isinstance(value, dict):
            if path:
                raise ValidationError([_nested(path, self.error_messages['invalid'])])
            raise ValidationError(self.error_messages['invalid'], code='invalid')
        form = self.form_class(value)
        if form.is_valid():
            return form.result
        raise ValidationError([
            _nested(join_path(path, sub), text) if join_path(path, sub) else ValidationError(text)
            for sub, text in error_paths(form)
        ])

    def clean(self, value):
        if value is None:
            if self.required:
                raise ValidationError(self.error_messages['required'], code='required')
            value = {}
        return self.clean_section(value)


class SectionListField(SectionField):
    """A JSON list of objects, each validated by ``form_class``."""

    default_error_messages = {
        'not_a_list': _("Expected a list."),
        'too_short': _("Expected at least %(minimum)d entries."),
    }

    def __init__(self, form_class, min_count=0, **kwargs):
        self.min_count = min_count
        super().__init__(form_class, **kwargs)

    def clean(self, value):
        if value is None:
            if self.required:
                raise ValidationError(self.error_messages['required'], code='required')
            value = []
        if not isinstance(value, list):
            raise ValidationError(self.error_messages['not_a_list'], code='not_a_list')
        if len(value) < self.min_count:
            raise ValidationError(
                self.error_messages['too_short'], code='too_short', params={'minimum': self.min_count},
            )
        results, errors = [], []
        for index, item in enumerate(value):
            try:
                results.append(self.clean_section(item, f"[{index}]"))
            except ValidationError as e:
                errors.extend(e.error_list)
        if errors:
            raise ValidationError(errors)
        return results


class StrictForm(forms.Form):
    """Form over one JSON object: unknown keys are errors, missing keys take the field's initial.

    Subclasses turn their cleaned data into a domain object in ``build``; a
    ``ValueError`` raised there becomes a form error. The built object is
    available as ``result`` once the form is valid.
    """

    def __init__(self, data):
        data = dict(data)
        super().__init__(data=data)
        self.unknown_keys = sorted(str(key) for key in data if key not in self.fields)
        for name, field in self.fields.items():
            if data.get(name) is None:
                initial = self.get_initial_for_field(field, name)
                if initial is not None:
                    data[name] = initial
        self.result = None

    def clean(self):
        cleaned_data = super().clean()
        for key in self.unknown_keys:
            self.add_error(None, ValidationError(_("Unknown key '%(key)s'."), code='unknown', params={'key': key}))
        if self.errors:
            return cleaned_data
        try:
            self.result = self.build(cleaned_data)
        except ValueError as e:
            raise ValidationError(str(e), code='invalid')
        return cleaned_data

    def build(self, cleaned_data):
        return cleaned_data


class PrimitiveForm(StrictForm):
    """A robot primitive: circle or rectangle in the body frame"""

    REQUIRED_KEYS = {
        CIRCLE: ('radius',),
        RECTANGLE: ('half_length', 'half_width'),
        POLYGON: ('vertices',),
    }

    kind = forms.ChoiceField(choices=PRIMITIVE_KINDS)
    radius = forms.FloatField(required=False, validators=[validate_positive])
    half_length = forms.FloatField(required=False, validators=[validate_positive])
    half_width = forms.FloatField(required=False, validators=[validate_positive])
    offset = VectorField(required=False, initial=[0.0, 0.0])

    def clean(self):
        kind = self.cleaned_data.get('kind')
        if kind:
            needed = self.REQUIRED_KEYS[kind]
            for name in needed:
                if self.cleaned_data.get(name) is None and name not in self.errors:
                    self.add_error(name, _("This field is required for a %(kind)s.") % {'kind': kind})
            for name in set().union(*self.REQUIRED_KEYS.values()) - set(needed):
                if self.fields.get(name) and self.cleaned_data.get(name) is not None:
                    self.add_error(name, _("Not used by a %(kind)s.") % {'kind': kind})
        return super().clean()

    def build(self, cleaned_data):
        kind, offset = cleaned_data['kind'], cleaned_data['offset']
        if kind == CIRCLE:
            return Primitive.circle(cleaned_data['radius'], offset)
        if kind == RECTANGLE:
            return Primitive.rectangle(cleaned_data['half_length'], cleaned_data['half_width'], offset)
        vertices = [(x + offset[0], y + offset[1]) for x, y in cleaned_data['vertices']]
        return Polygon(tuple(vertices))


class ObstacleShapeForm(PrimitiveForm):
    """An obstacle footprint: circle, rectangle or polygon around the obstacle position"""

    kind = forms.ChoiceField(choices=PRIMITIVE_KINDS + ((POLYGON, 'Polygon'),))
    vertices = PointListField(required=False)


class RobotForm(StrictForm):
    model = forms.ChoiceField(choices=MODEL_CHOICES)
    shape = SectionListField(PrimitiveForm, min_count=1, required=True)
    start = VectorField()
    theta = forms.FloatField(required=False, initial=0.0)
    goal = VectorField()
    goal_theta = forms.FloatField(required=False, initial=0.0)
    u_max = VectorField()
    u_min = VectorField(required=False)

    def clean(self):
        u_min, u_max = self.cleaned_data.get('u_min'), self.cleaned_data.get('u_max')
        if u_min is not None and u_max is not None:
            for axis, (low, high) in enumerate(zip(u_min, u_max)):
                if low > high:
                    self.add_error('u_min', _("u_min[%(axis)d] = %(low)g exceeds u_max[%(axis)d] = %(high)g.") % {
                        'axis': axis, 'low': low, 'high': high,
                    })
        return super().clean()

    def build(self, cleaned_data):
        u_max = cleaned_data['u_max']
        u_min = cleaned_data['u_min'] or tuple(-limit for limit in u_max)
        return RobotConfig(
            shape=RobotShape(tuple(cleaned_data['shape'])),
            initial=RobotState(cleaned_data['model'], *cleaned_data['start'], cleaned_data['theta']),
            goal=Goal(*cleaned_data['goal'], cleaned_data['goal_theta']),
            bounds=InputBounds(u_min, u_max),
        )


class ObstacleForm(StrictForm):
    shape = SectionField(ObstacleShapeForm, required=True)
    position = VectorField()
    velocity = VectorField(required=False, initial=[0.0, 0.0])
    acceleration = VectorField(required=False, initial=[0.0, 0.0])
    destination = VectorField(required=False)
    points = forms.IntegerField(required=False, initial=24, min_value=3)
    note = forms.CharField(required=False, initial='')

    def build(self, cleaned_data):
        state = ObstacleState(
            position=cleaned_data['position'],
            velocity=cleaned_data['velocity'],
            acceleration=cleaned_data['acceleration'],
            destination=cleaned_data['destination'],
        )
        return ObstacleConfig(cleaned_data['shape'], state, cleaned_data['points'], cleaned_data['note'])


class ControllerForm(StrictForm):
    """Controller gains; every key is optional"""

    alpha = forms.FloatField(required=False, initial=1.0, validators=[validate_positive])
    gamma_d = forms.FloatField(required=False, initial=1.0, validators=[validate_positive])
    gamma_theta = forms.FloatField(required=False, initial=3.0, validators=[validate_positive])
    r_weight = forms.FloatField(required=False, initial=1.0, validators=[validate_positive])
    slack_weight = forms.FloatField(required=False, initial=1000.0, validators=[validate_positive])
    delta_q = forms.FloatField(required=False, initial=lambda: settings.SDF_GRADIENT_STEP, validators=[validate_positive])
    sdf_mode = forms.ChoiceField(required=False, choices=SDF_MODE_CHOICES, initial=SDF_MODE_CHOICES[0][0])
    grid_margin = forms.FloatField(required=False, validators=[validate_positive])
    grid_resolution = forms.FloatField(required=False, validators=[validate_positive])
    qp_tolerance = forms.FloatField(required=False, validators=[validate_positive])
    qp_max_iter = forms.IntegerField(required=False, min_value=1)

    def build(self, cleaned_data):
        return ControllerParams(**cleaned_data)


class SimForm(StrictForm):
    dt = forms.FloatField(required=False, initial=0.1, validators=[validate_positive])
    t_max = forms.FloatField(required=False, initial=20.0, validators=[validate_positive])
    goal_tol = forms.FloatField(required=False, initial=lambda: settings.GOAL_TOLERANCE, validators=[validate_positive])
    max_infeasible = forms.IntegerField(required=False, initial=lambda: settings.MAX_INFEASIBLE_STEPS, min_value=1)
    record_timing = forms.BooleanField(required=False, initial=True)

    def clean(self):
        dt, t_max = self.cleaned_data.get('dt'), self.cleaned_data.get('t_max')
        if dt and t_max and not t_max > dt:
            self.add_error('t_max', _("t_max must exceed dt (%(dt)g s).") % {'dt': dt})
        return super().clean()

    def build(self, cleaned_data):
        return SimConfig(**cleaned_data)


class OutputsForm(StrictForm):
    csv = forms.CharField(required=False, initial='')
    trajectory_svg = forms.CharField(required=False, initial='')
    cbf_svg = forms.CharField(required=False, initial='')
    controls_svg = forms.CharField(required=False, initial='')

    def build(self, cleaned_data):
        return OutputsConfig(**cleaned_data)


class ScenarioForm(StrictForm):
    """A whole scenario document"""

    name = forms.CharField(required=False, initial='')
    description = forms.CharField(required=False, initial='')
    robot = SectionField(RobotForm, required=True)
    obstacles = SectionListField(ObstacleForm)
    controller = SectionField(ControllerForm)
    sim = SectionField(SimForm)
    outputs = SectionField(OutputsForm)

    def build(self, cleaned_data):
        return ScenarioConfig(
            name=cleaned_data['name'],
            description=cleaned_data['description'],
            robot=cleaned_data['robot'],
            obstacles=tuple(replace(obstacle, id=index) for index, obstacle in enumerate(cleaned_data['obstacles'])),
            controller=cleaned_data['controller'],
            sim=cleaned_data['sim'],
            outputs=cleaned_data['outputs'],
        )
