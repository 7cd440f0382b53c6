from django.apps import AppConfig


class FormalismConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'formalism'
    verbose_name = 'Thermodynamic formalism for correspondences'
