"""
URL configuration for fastsync project.

The API lives under /api/; the admin exposes ExperimentRun records.
"""
from django.contrib import admin
from django.urls import include, path

urlpatterns = [
    path('admin/', admin.site.urls),
    path('api/', include('experiments.urls')),
    path('api-auth/', include('rest_framework.urls')),
]
